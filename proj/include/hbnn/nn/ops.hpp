#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace hbnn::nn {

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch_size() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_height() * out_width(); }
};

inline constexpr std::size_t kPadIndex = std::numeric_limits<std::size_t>::max();

/// Column matrix (patch_size x positions) of one CHW image; padding reads 0.
/// Rows are `ld` apart (0 means positions), so several images can share one
/// wide column matrix.
void im2col(std::span<const double> image, const ConvGeometry &g, std::span<double> cols,
            std::size_t ld = 0);
/// Adjoint of im2col: accumulates columns back into a CHW image.
void col2im(std::span<const double> cols, const ConvGeometry &g, std::span<double> image,
            std::size_t ld = 0);
/// Source element index for every (patch row, position) entry, kPadIndex for
/// padding. Row-major like im2col's output.
std::vector<std::size_t> im2col_indices(const ConvGeometry &g);

/// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
/// c[m x k] (+)= a[m x n] * b[k x n]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k, bool accumulate);
/// c[k x n] (+)= a[m x k]^T * b[m x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

} // namespace hbnn::nn
