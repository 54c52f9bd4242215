#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hbnn/binarize.hpp"
#include "hbnn/tensor.hpp"

namespace hbnn {

struct BitFraction {
  int bits = 1;
  double fraction = 1.0;

  friend bool operator==(const BitFraction &, const BitFraction &) = default;
};

/// Fractions of elements per bitwidth, ascending by bitwidth.
class BitDistribution {
public:
  BitDistribution() = default;
  /// Validates: bitwidths strictly increasing within 1..kMaxBits, fractions in
  /// (0, 1], summing to 1 within 1e-9.
  explicit BitDistribution(std::vector<BitFraction> entries);

  const std::vector<BitFraction> &entries() const noexcept { return entries_; }
  double average() const noexcept;
  int max_bits() const noexcept { return entries_.empty() ? 0 : entries_.back().bits; }
  std::string to_string() const;

private:
  std::vector<BitFraction> entries_;
};

/// How an average bitwidth is turned into a distribution.
struct DistPolicy {
  enum class Kind { Adjacent, Preset, Paper14 };

  Kind kind = Kind::Adjacent;
  std::vector<BitFraction> preset;

  static DistPolicy adjacent() { return {}; }
  static DistPolicy paper_1_4() { return {Kind::Paper14, {}}; }
  static DistPolicy from_preset(std::vector<BitFraction> entries) {
    return {Kind::Preset, std::move(entries)};
  }

  /// "adjacent", "paper-1.4", or "preset:1=0.8/3=0.2".
  static DistPolicy parse(std::string_view text);
  std::string name() const;
};

BitDistribution dist_from_avg(double average_bits, const DistPolicy &policy);

/// Every distribution over `bitwidths` whose fractions are multiples of `step`
/// and whose average equals `average_bits` (within 1e-9).
std::vector<BitDistribution> distribution_grid(double average_bits, double step = 0.05,
                                               const std::vector<int> &bitwidths = {1, 2, 3});

struct SortHeuristic {
  enum class Kind { TopDown, MiddleOut, BottomUp, Random, MiddleOutSigned };

  Kind kind = Kind::MiddleOut;
  std::uint64_t seed = 0;

  static SortHeuristic top_down() { return {Kind::TopDown}; }
  static SortHeuristic middle_out() { return {Kind::MiddleOut}; }
  static SortHeuristic bottom_up() { return {Kind::BottomUp}; }
  static SortHeuristic random(std::uint64_t seed) { return {Kind::Random, seed}; }
  /// Sorts |t| - mean|t| ascending without taking the absolute deviation.
  static SortHeuristic middle_out_signed() { return {Kind::MiddleOutSigned}; }

  /// "td", "mo", "bu", "random" (seed supplied separately), "mo-signed".
  static SortHeuristic parse(std::string_view text, std::uint64_t seed = 0);
  std::string name() const;
};

/// Index permutation, earliest = deserves the fewest bits. Ties keep
/// ascending index order.
std::vector<std::size_t> sort_indices(const Tensor &t, const SortHeuristic &h);

/// Number of elements per distribution entry for a tensor of `n` elements.
///
/// Cumulative boundaries round(C_b * n) are taken with round-half-to-even
/// (C_b = running sum of fractions), so entry b gets
/// round(C_b n) - round(C_{b-1} n) and the largest bitwidth absorbs whatever
/// is left. Each boundary moves by at most half an element, which bounds the
/// mask average error by (max_bits - min_bits) / (2n).
std::vector<std::size_t> allocation_counts(const BitDistribution &dist, std::size_t n);

/// Assigns widths along `order` in ascending-bitwidth order of `dist`.
BitMask mask_from_order(const Shape &shape, const std::vector<std::size_t> &order,
                        const BitDistribution &dist);

struct GridChoice {
  BitDistribution dist;
  double distance = 0.0;
};

/// Grid-sweep DistFromAvg: the distribution from distribution_grid() whose
/// mask along `order` reconstructs `t` with the smallest normalized distance.
/// Ties keep the earliest grid entry.
GridChoice best_grid_distribution(const Tensor &t, const std::vector<std::size_t> &order,
                                  double average_bits, double step = 0.05,
                                  const std::vector<int> &bitwidths = {1, 2, 3});

BitMask generate_mask(const Tensor &t, double average_bits, const SortHeuristic &h,
                      const DistPolicy &policy);
BitMask generate_mask(const Tensor &t, const BitDistribution &dist, const SortHeuristic &h);

} // namespace hbnn
