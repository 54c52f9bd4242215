#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hbnn {

/// Seeded random stream with platform-independent output.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are not (their algorithms are
/// implementation-defined), so every derived quantity below uses its own
/// documented transform:
///   - uniform():   top 53 bits of one engine draw, times 2^-53, in [0, 1).
///   - gaussian():  Box-Muller on two uniforms, both outputs used in order.
///   - below(n):    rejection sampling on the smallest covering bitmask.
class Rng {
public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+boxmuller/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double gaussian();
  std::uint64_t below(std::uint64_t n);

  /// Independent stream derived from this seed and a stream id
  /// (splitmix64 mix of both).
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace hbnn
