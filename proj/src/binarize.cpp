#include "hbnn/binarize.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <string>

namespace hbnn {

namespace {

inline std::int8_t sign_of(double v) { return v >= 0.0 ? 1 : -1; }

void check_bits(int bits) {
  if (bits < 1 || bits > kMaxBits)
    fail(ErrorKind::UnsupportedBitwidth,
         "bitwidth " + std::to_string(bits) + " outside 1.." + std::to_string(kMaxBits));
}

} // namespace

BitMask::BitMask(Shape shape, std::vector<std::uint8_t> widths)
    : shape_(std::move(shape)), widths_(std::move(widths)) {
  if (shape_size(shape_) != widths_.size())
    fail(ErrorKind::ShapeMismatch, "mask width count does not match its shape");
  for (auto w : widths_)
    check_bits(w);
}

BitMask BitMask::uniform(const Shape &shape, int bits) {
  check_bits(bits);
  return BitMask(shape, std::vector<std::uint8_t>(shape_size(shape),
                                                  static_cast<std::uint8_t>(bits)));
}

int BitMask::max_bits() const noexcept {
  return widths_.empty() ? 0 : *std::max_element(widths_.begin(), widths_.end());
}

double BitMask::average() const noexcept {
  return widths_.empty() ? 0.0
                         : static_cast<double>(total_bits()) / static_cast<double>(widths_.size());
}

std::uint64_t BitMask::total_bits() const noexcept {
  return std::accumulate(widths_.begin(), widths_.end(), std::uint64_t{0});
}

HeterogeneousBinaryTensor::HeterogeneousBinaryTensor(BitMask mask, std::vector<BitPlane> planes)
    : mask_(std::move(mask)), planes_(std::move(planes)) {
  if (static_cast<int>(planes_.size()) != mask_.max_bits())
    fail(ErrorKind::InvalidInput, "plane count must equal the mask's maximum bitwidth");
  for (std::size_t p = 0; p < planes_.size(); ++p) {
    const auto &plane = planes_[p];
    if (plane.signs.size() != mask_.size())
      fail(ErrorKind::ShapeMismatch, "plane sign count does not match the mask");
    if (!(plane.scale >= 0.0) || !std::isfinite(plane.scale))
      fail(ErrorKind::InvalidInput, "plane scales must be finite and nonnegative");
    for (std::size_t j = 0; j < mask_.size(); ++j) {
      const bool active = mask_[j] > static_cast<int>(p);
      const auto s = plane.signs[j];
      if (active ? (s != 1 && s != -1) : s != 0)
        fail(ErrorKind::InvalidInput, "plane " + std::to_string(p + 1) +
                                          " sign does not match element activity");
    }
  }
}

double hard_sigmoid(double x) { return std::max(0.0, std::min(1.0, (x + 1.0) / 2.0)); }

Tensor stochastic_binarize(const Tensor &t, Rng &rng) {
  require_finite(t, "stochastic_binarize");
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i)
    out[i] = rng.uniform() < hard_sigmoid(t[i]) ? 1.0 : -1.0;
  return out;
}

Tensor sign_binarize(const Tensor &t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i)
    out[i] = sign_of(t[i]);
  return out;
}

ScaledSign scaled_sign_binarize(const Tensor &t) {
  const double alpha = mean_abs(t);
  return {alpha, sign_binarize(t)};
}

HeterogeneousBinaryTensor residual_binarize(const Tensor &t, int bits) {
  check_bits(bits);
  if (t.empty())
    fail(ErrorKind::EmptyInput, "residual_binarize of an empty tensor");
  return hetero_binarize(t, BitMask::uniform(t.shape(), bits));
}

HeterogeneousBinaryTensor hetero_binarize(const Tensor &t, const BitMask &mask) {
  if (t.shape() != mask.shape())
    fail(ErrorKind::ShapeMismatch, "hetero_binarize: mask shape differs from tensor shape");
  require_finite(t, "hetero_binarize");

  const std::size_t n = t.size();
  const int max_bits = mask.max_bits();
  std::vector<double> residual(t.values().begin(), t.values().end());
  std::vector<BitPlane> planes(static_cast<std::size_t>(max_bits));

  for (int p = 0; p < max_bits; ++p) {
    auto &plane = planes[static_cast<std::size_t>(p)];
    plane.signs.assign(n, 0);
    double sum = 0.0;
    std::size_t active = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j] > p) {
        sum += std::fabs(residual[j]);
        ++active;
      }
    }
    assert(active > 0 && "every plane up to max_bits has an active element");
    const double scale = sum / static_cast<double>(active);
    plane.scale = scale;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j] > p) {
        const auto s = sign_of(residual[j]);
        plane.signs[j] = s;
        residual[j] -= scale * s;
      }
    }
  }
  return HeterogeneousBinaryTensor(mask, std::move(planes));
}

Tensor reconstruct(const HeterogeneousBinaryTensor &h) {
  Tensor out(h.shape());
  for (const auto &plane : h.planes())
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] += plane.scale * plane.signs[j];
  return out;
}

Tensor ste_gradient(const Tensor &t, const Tensor &upstream) {
  require_same_shape(t, upstream, "ste_gradient");
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i)
    out[i] = std::fabs(t[i]) <= 1.0 ? upstream[i] : 0.0;
  return out;
}

} // namespace hbnn
