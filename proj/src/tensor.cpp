#include "hbnn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "hbnn/rng.hpp"

namespace hbnn {

namespace {

std::string shape_str(const Shape &s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i)
      out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

} // namespace

std::size_t shape_size(const Shape &shape) {
  if (shape.empty())
    fail(ErrorKind::InvalidShape, "shape must have at least one dimension");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0)
      fail(ErrorKind::InvalidShape, "zero dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    fail(ErrorKind::InvalidShape, "data length " + std::to_string(data_.size()) +
                                      " does not match shape " + shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v))
      return false;
  return true;
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *what) {
  if (a.shape() != b.shape())
    fail(ErrorKind::ShapeMismatch, std::string(what) + ": shape " + shape_str(a.shape()) +
                                       " vs " + shape_str(b.shape()));
}

void require_finite(const Tensor &t, const char *what) {
  if (!t.all_finite())
    fail(ErrorKind::NumericFailure, std::string(what) + ": non-finite value in tensor");
}

Tensor gaussian_tensor(const Shape &shape, std::uint64_t seed) {
  const std::size_t n = shape_size(shape);
  std::vector<double> data(n);
  Rng rng(seed);
  for (auto &v : data)
    v = rng.gaussian();
  return Tensor(shape, std::move(data));
}

double mean_abs(const Tensor &t) {
  if (t.empty())
    fail(ErrorKind::EmptyInput, "mean_abs of an empty tensor");
  double sum = 0.0;
  for (double v : t.values())
    sum += std::fabs(v);
  return sum / static_cast<double>(t.size());
}

double l2_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v)
    sum += x * x;
  return std::sqrt(sum);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    fail(ErrorKind::ShapeMismatch, "dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double normalized_distance(const Tensor &a, const Tensor &b) {
  require_same_shape(a, b, "normalized_distance");
  const double denom = l2_norm(a.values());
  if (denom == 0.0)
    fail(ErrorKind::DegenerateNorm, "normalized_distance: reference tensor has zero norm");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum) / denom;
}

} // namespace hbnn
