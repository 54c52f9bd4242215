#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "hbnn/packed.hpp"
#include "hbnn/tensor.hpp"

namespace hbnn {

inline constexpr std::uint32_t kHbtVersion = 1;

/// HBT file layout, little-endian throughout:
///   "HBT1"                      4 bytes
///   version                     u32 (currently 1)
///   rank                        u32
///   dims[rank]                  u32 each
///   max_bits                    u8
///   element_count               u64
///   mask[element_count]         u8 each, bitwidth 1..8
///   per plane (max_bits times):
///     scale                     f32
///     activity[ceil(N/64)]      u64 each, element j -> word j/64 bit j%64
///     signs[ceil(N/64)]         u64 each, 1 = positive
/// Scales are narrowed to f32 on write.
void write_hbt(std::ostream &os, const PackedPlanes &p);
PackedPlanes read_hbt(std::istream &is);
void save_hbt(const std::string &path, const PackedPlanes &p);
PackedPlanes load_hbt(const std::string &path);

/// Raw tensor layout: "RAWTENS1", u32 rank, u32 dims[rank], f32 data.
void write_raw_tensor(std::ostream &os, const Tensor &t);
Tensor read_raw_tensor(std::istream &is);
void save_raw_tensor(const std::string &path, const Tensor &t);
Tensor load_raw_tensor(const std::string &path);

} // namespace hbnn
