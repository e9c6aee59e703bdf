#pragma once

// Brute-force reference implementations used only by tests. These are kept
// deliberately naive (direct summation, scatter loops, all-pairs distances)
// and independent of the library's GEMM-based kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "branchseg/core/tensor.hpp"

namespace oracle {

using branchseg::Shape;
using branchseg::Tensor;

// output[i] = sum_k input[i + r*k] w[k], generalized to 2-d and channels,
// zero padding, floor output extents.
template <typename T>
Tensor<T> conv2d_ref(const Tensor<T>& in, const Tensor<T>& k, const std::vector<T>* bias,
                     int stride, int dilation, int pad) {
  const int N = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int Ho = (H + 2 * pad - (dilation * (kh - 1) + 1)) / stride + 1;
  const int Wo = (W + 2 * pad - (dilation * (kw - 1) + 1)) / stride + 1;
  Tensor<T> out(Shape{N, Co, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bias ? double((*bias)[co]) : 0.0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = oy * stride - pad + ky * dilation;
                int ix = ox * stride - pad + kx * dilation;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += double(in.at(n, ci, iy, ix)) * double(k.at(co, ci, ky, kx));
              }
          out.at(n, co, oy, ox) = T(acc);
        }
  return out;
}

// Re-expand a kernel by inserting zero rows/columns between taps so that
// conv(rate r) == conv(rate 1) with the expanded kernel.
template <typename T>
Tensor<T> zero_insert_kernel(const Tensor<T>& k, int rate) {
  const int Co = k.dim(0), Ci = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int eh = rate * (kh - 1) + 1, ew = rate * (kw - 1) + 1;
  Tensor<T> out(Shape{Co, Ci, eh, ew});
  for (int co = 0; co < Co; ++co)
    for (int ci = 0; ci < Ci; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) out.at(co, ci, ky * rate, kx * rate) = k.at(co, ci, ky, kx);
  return out;
}

// Transposed convolution by explicit scatter-add. Kernel layout [Ci,Co,kh,kw].
template <typename T>
Tensor<T> transpose_conv2d_ref(const Tensor<T>& in, const Tensor<T>& k, int stride, int pad) {
  const int N = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int Ho = (H - 1) * stride - 2 * pad + kh;
  const int Wo = (W - 1) * stride - 2 * pad + kw;
  Tensor<T> out(Shape{N, Co, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int ci = 0; ci < Ci; ++ci)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          T v = in.at(n, ci, iy, ix);
          for (int co = 0; co < Co; ++co)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int oy = iy * stride - pad + ky;
                int ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
                out.at(n, co, oy, ox) += v * k.at(ci, co, ky, kx);
              }
        }
  return out;
}

// Direct per-pixel bilinear weights, align-corners-false.
template <typename T>
Tensor<T> bilinear_ref(const Tensor<T>& in, int out_h, int out_w) {
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  Tensor<T> out(Shape{N, C, out_h, out_w});
  auto src_of = [](int dst, int out_extent, int in_extent) {
    double s = (dst + 0.5) * double(in_extent) / double(out_extent) - 0.5;
    return std::min(std::max(s, 0.0), double(in_extent - 1));
  };
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = src_of(oy, out_h, H);
    int y0 = std::min(int(sy), std::max(H - 2, 0));
    int y1 = H > 1 ? y0 + 1 : y0;
    double fy = H > 1 ? sy - y0 : 0.0;
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = src_of(ox, out_w, W);
      int x0 = std::min(int(sx), std::max(W - 2, 0));
      int x1 = W > 1 ? x0 + 1 : x0;
      double fx = W > 1 ? sx - x0 : 0.0;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          double v = (1 - fy) * (1 - fx) * double(in.at(n, c, y0, x0)) +
                     (1 - fy) * fx * double(in.at(n, c, y0, x1)) +
                     fy * (1 - fx) * double(in.at(n, c, y1, x0)) +
                     fy * fx * double(in.at(n, c, y1, x1));
          out.at(n, c, oy, ox) = T(v);
        }
    }
  }
  return out;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

// Central finite differences of a scalar re-evaluation against one tensor.
template <typename T, typename F>
Tensor<T> fd_gradient(F&& eval, Tensor<T>& x, T h) {
  Tensor<T> g(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T orig = x[i];
    x[i] = orig + h;
    const double fp = double(eval());
    x[i] = orig - h;
    const double fm = double(eval());
    x[i] = orig;
    g[i] = T((fp - fm) / (2.0 * double(h)));
  }
  return g;
}

// Max relative error with a floor at 1e-3 of the gradient scale, so
// coordinates dominated by finite-difference roundoff cannot trip the check.
template <typename T>
double max_rel_err(const Tensor<T>& analytic, const Tensor<T>& fd) {
  double scale = 0;
  for (int64_t i = 0; i < analytic.numel(); ++i)
    scale = std::max({scale, std::abs(double(analytic[i])), std::abs(double(fd[i]))});
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0;
  for (int64_t i = 0; i < analytic.numel(); ++i) {
    double a = double(analytic[i]), f = double(fd[i]);
    worst = std::max(worst, std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor}));
  }
  return worst;
}

template <typename T>
void fill_uniform(Tensor<T>& t, branchseg::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(lo, hi));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

}  // namespace oracle
