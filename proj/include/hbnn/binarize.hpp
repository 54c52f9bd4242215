#pragma once

#include <cstdint>
#include <vector>

#include "hbnn/rng.hpp"
#include "hbnn/tensor.hpp"

namespace hbnn {

inline constexpr int kMaxBits = 8;

/// Per-element bitwidth assignment, widths in 1..kMaxBits.
class BitMask {
public:
  BitMask() = default;
  BitMask(Shape shape, std::vector<std::uint8_t> widths);

  static BitMask uniform(const Shape &shape, int bits);

  const Shape &shape() const noexcept { return shape_; }
  const std::vector<std::uint8_t> &widths() const noexcept { return widths_; }
  std::size_t size() const noexcept { return widths_.size(); }
  int operator[](std::size_t i) const { return widths_[i]; }

  int max_bits() const noexcept;
  double average() const noexcept;
  /// Total number of stored sign bits (sum of widths).
  std::uint64_t total_bits() const noexcept;

  friend bool operator==(const BitMask &, const BitMask &) = default;

private:
  Shape shape_;
  std::vector<std::uint8_t> widths_;
};

/// One residual step: a scale and a sign per element. Elements that are not
/// active at this plane hold sign 0.
struct BitPlane {
  double scale = 0.0;
  std::vector<std::int8_t> signs;

  friend bool operator==(const BitPlane &, const BitPlane &) = default;
};

/// Heterogeneous residual binarization of a tensor: planes[i] is bit i + 1,
/// and element j carries signs exactly in planes 0 .. mask[j] - 1.
class HeterogeneousBinaryTensor {
public:
  HeterogeneousBinaryTensor() = default;
  HeterogeneousBinaryTensor(BitMask mask, std::vector<BitPlane> planes);

  const Shape &shape() const noexcept { return mask_.shape(); }
  std::size_t size() const noexcept { return mask_.size(); }
  const BitMask &mask() const noexcept { return mask_; }
  const std::vector<BitPlane> &planes() const noexcept { return planes_; }
  int max_bits() const noexcept { return static_cast<int>(planes_.size()); }

  friend bool operator==(const HeterogeneousBinaryTensor &,
                         const HeterogeneousBinaryTensor &) = default;

private:
  BitMask mask_;
  std::vector<BitPlane> planes_;
};

struct ScaledSign {
  double alpha = 0.0;
  Tensor signs;
};

double hard_sigmoid(double x);

/// +1 with probability hard_sigmoid(t_j), otherwise -1.
Tensor stochastic_binarize(const Tensor &t, Rng &rng);

/// Elementwise sign with sign(0) = +1.
Tensor sign_binarize(const Tensor &t);

ScaledSign scaled_sign_binarize(const Tensor &t);

HeterogeneousBinaryTensor residual_binarize(const Tensor &t, int bits);
HeterogeneousBinaryTensor hetero_binarize(const Tensor &t, const BitMask &mask);

Tensor reconstruct(const HeterogeneousBinaryTensor &h);

/// upstream * 1[|t| <= 1].
Tensor ste_gradient(const Tensor &t, const Tensor &upstream);

} // namespace hbnn
