#pragma once

#include <Eigen/Dense>

#include "branchseg/core/tensor.hpp"

namespace branchseg::detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

inline int conv_out_extent(int in, int k, int stride, int dilation, int pad) {
  int eff = dilation * (k - 1) + 1;
  return (in + 2 * pad - eff) / stride + 1;
}

/// Gather one image [C,H,W] into a [C*kh*kw, Ho*Wo] patch matrix.
/// Out-of-range taps read zero.
template <typename T>
void im2col(const T* in, int C, int H, int W, int kh, int kw, int stride, int dilation, int pad,
            int Ho, int Wo, T* cols) {
  const int64_t patch = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols + ((int64_t(c) * kh + ky) * kw + kx) * patch;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < Wo; ++ox) row[int64_t(oy) * Wo + ox] = T(0);
            continue;
          }
          const T* src = in + (int64_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx * dilation;
            row[int64_t(oy) * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add a patch matrix back into an image; adjoint of im2col.
template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int dilation,
                int pad, int Ho, int Wo, T* im) {
  const int64_t patch = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((int64_t(c) * kh + ky) * kw + kx) * patch;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) continue;
          T* dst = im + (int64_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx * dilation;
            if (ix >= 0 && ix < W) dst[ix] += row[int64_t(oy) * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace branchseg::detail
