#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hbnn/error.hpp"

namespace hbnn {

using Shape = std::vector<std::size_t>;

/// Number of elements described by `shape`; throws InvalidShape on an empty
/// shape or a zero dimension.
std::size_t shape_size(const Shape &shape);

/// Dense row-major tensor of 64-bit reals.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape &shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double> &data() const noexcept { return data_; }
  double *raw() noexcept { return data_.data(); }
  const double *raw() const noexcept { return data_.data(); }

  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape with an equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor &, const Tensor &) = default;

private:
  Shape shape_;
  std::vector<double> data_;
};

void require_same_shape(const Tensor &a, const Tensor &b, const char *what);
void require_finite(const Tensor &t, const char *what);

Tensor gaussian_tensor(const Shape &shape, std::uint64_t seed);

double mean_abs(const Tensor &t);
double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

/// ||a - b|| / ||a||.
double normalized_distance(const Tensor &a, const Tensor &b);

} // namespace hbnn
