#include "hbnn/nn/ops.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include <cblas.h>

#include "hbnn/error.hpp"

namespace hbnn::nn {

namespace {

int blas_int(std::size_t v) {
  if (v > static_cast<std::size_t>(std::numeric_limits<int>::max()))
    fail(ErrorKind::InvalidShape, "matrix dimension exceeds the BLAS index range");
  return static_cast<int>(v);
}

} // namespace

void im2col(std::span<const double> image, const ConvGeometry &g, std::span<double> cols,
            std::size_t ld) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  if (ld == 0)
    ld = oh * ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        double *out = cols.data() + row * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            out[oy * ow + ox] =
                inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                               static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, const ConvGeometry &g, std::span<double> image,
            std::size_t ld) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  if (ld == 0)
    ld = oh * ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const double *in = cols.data() + row * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height))
            continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width))
              continue;
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += in[oy * ow + ox];
          }
        }
      }
    }
  }
}

std::vector<std::size_t> im2col_indices(const ConvGeometry &g) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::vector<std::size_t> idx(g.patch_size() * oh * ow, kPadIndex);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row)
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                ix < static_cast<long>(g.width))
              idx[row * oh * ow + oy * ow + ox] =
                  (c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix);
          }
        }
  return idx;
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, blas_int(m), blas_int(n), blas_int(k),
              1.0, a.data(), blas_int(k), b.data(), blas_int(n), accumulate ? 1.0 : 0.0, c.data(),
              blas_int(n));
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, blas_int(m), blas_int(k), blas_int(n), 1.0,
              a.data(), blas_int(n), b.data(), blas_int(n), accumulate ? 1.0 : 0.0, c.data(),
              blas_int(k));
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, blas_int(k), blas_int(n), blas_int(m), 1.0,
              a.data(), blas_int(k), b.data(), blas_int(n), accumulate ? 1.0 : 0.0, c.data(),
              blas_int(n));
}

} // namespace hbnn::nn
