#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hbnn/binarize.hpp"
#include "hbnn/bit_alloc.hpp"

namespace hbnn {

inline constexpr std::size_t kWordBits = 64;

inline std::size_t word_count(std::size_t elements) {
  return (elements + kWordBits - 1) / kWordBits;
}

/// One bit plane in word-packed form. Element j lives in word j / 64, bit
/// j % 64. Sign bit 1 means positive; activity bit 1 means the element has a
/// term at this plane. Sign bits are 0 wherever activity is 0, and bits past
/// the element count are 0.
struct PackedPlane {
  double scale = 0.0;
  std::vector<std::uint64_t> signs;
  std::vector<std::uint64_t> activity;

  friend bool operator==(const PackedPlane &, const PackedPlane &) = default;
};

struct PackedPlanes {
  Shape shape;
  std::size_t element_count = 0;
  std::vector<PackedPlane> planes;

  std::size_t words() const noexcept { return word_count(element_count); }

  friend bool operator==(const PackedPlanes &, const PackedPlanes &) = default;
};

PackedPlanes pack(const HeterogeneousBinaryTensor &h);
HeterogeneousBinaryTensor unpack(const PackedPlanes &p);

/// Checks the layout invariants (padding, sign/activity agreement, downward
/// closed activity). Throws Format on violation.
void validate(const PackedPlanes &p);

/// Gathers `indices` (SIZE_MAX = padding, inactive everywhere) from `src` into
/// a new packed operand sharing src's scales. Used to form im2col patches.
PackedPlanes gather(const PackedPlanes &src, std::span<const std::size_t> indices);

/// Sum over plane pairs of mu_i * nu_k * (agreements - disagreements) across
/// elements active in both planes.
double xnor_dot(const PackedPlanes &w, const PackedPlanes &a);

Tensor xnor_matvec(std::span<const PackedPlanes> rows, const PackedPlanes &a);

/// Exact number of (plane_i, plane_k, element) triples active in both operands.
std::uint64_t active_pair_count(const PackedPlanes &w, const PackedPlanes &a);

struct BitopCount {
  double mn_factor = 0.0;          ///< m * n, average bits of each operand multiplied.
  double reduction_factor = 0.0;   ///< 64 / (m n) relative to scalar multiplies.
  std::uint64_t word_ops = 0;      ///< ceil(ceil(N / 64) * m * n) plane-pair word ops.
};

BitopCount bitop_count(const BitDistribution &m_dist, const BitDistribution &n_dist,
                       std::size_t elements);

} // namespace hbnn
