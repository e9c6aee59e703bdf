#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "branchseg/autodiff/im2col.hpp"
#include "branchseg/autodiff/tape.hpp"
#include "branchseg/core/rng.hpp"

namespace branchseg {

enum class Activation { relu, leaky_relu, sigmoid };

namespace detail {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
bool any_requires(const Var<T>& a) {
  return a && a->requires_grad;
}
template <typename T, typename... Rest>
bool any_requires(const Var<T>& a, const Rest&... rest) {
  return any_requires(a) || any_requires(rest...);
}

template <typename T>
void check_4d(const Var<T>& v, const char* what) {
  if (!v || v->value.ndim() != 4) throw std::invalid_argument(std::string(what) + ": expected a 4-d tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: out[n,co,oy,ox] = sum_{ci,ky,kx} in[n,ci,oy*s-p+ky*r, ox*s-p+kx*r] * w[co,ci,ky,kx]
// Dilation rate r spaces the kernel taps; r=1 is standard convolution.
// Inner products run as im2col + GEMM.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
              int stride, int dilation, int pad) {
  detail::check_4d(input, "conv2d input");
  detail::check_4d(kernel, "conv2d kernel");
  if (stride < 1 || dilation < 1 || pad < 0)
    throw std::invalid_argument("conv2d: stride/dilation must be >= 1 and pad >= 0");

  const int N = input->value.dim(0), Ci = input->value.dim(1);
  const int H = input->value.dim(2), W = input->value.dim(3);
  const int Co = kernel->value.dim(0), Ck = kernel->value.dim(1);
  const int kh = kernel->value.dim(2), kw = kernel->value.dim(3);
  if (Ci != Ck)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(Ci) +
                                " do not match kernel channels " + std::to_string(Ck));
  if (bias && (bias->value.ndim() != 1 || bias->value.dim(0) != Co))
    throw std::invalid_argument("conv2d: bias shape must be [Cout]");
  const int eff_h = dilation * (kh - 1) + 1;
  const int eff_w = dilation * (kw - 1) + 1;
  if (H + 2 * pad < eff_h || W + 2 * pad < eff_w)
    throw std::invalid_argument("conv2d: effective kernel " + std::to_string(eff_h) + "x" +
                                std::to_string(eff_w) + " exceeds padded input");

  const int Ho = detail::conv_out_extent(H, kh, stride, dilation, pad);
  const int Wo = detail::conv_out_extent(W, kw, stride, dilation, pad);
  const int K = Ci * kh * kw;
  const int64_t P = int64_t(Ho) * Wo;

  auto out = make_var(Tensor<T>(Shape{N, Co, Ho, Wo}),
                      detail::any_requires(input, kernel, bias));

  std::vector<T> cols(static_cast<size_t>(K) * P);
  detail::CMapRM<T> wmat(kernel->value.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col(input->value.data() + int64_t(n) * Ci * H * W, Ci, H, W, kh, kw, stride,
                   dilation, pad, Ho, Wo, cols.data());
    detail::MapRM<T> out_n(out->value.data() + int64_t(n) * Co * P, Co, P);
    out_n.noalias() = wmat * detail::CMapRM<T>(cols.data(), K, P);
    if (bias)
      for (int co = 0; co < Co; ++co) out_n.row(co).array() += bias->value[co];
  }

  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      std::vector<T> cols(static_cast<size_t>(K) * P);
      detail::CMapRM<T> wmat(kernel->value.data(), Co, K);
      if (input->requires_grad) input->ensure_grad();
      if (kernel->requires_grad) kernel->ensure_grad();
      if (bias && bias->requires_grad) bias->ensure_grad();
      for (int n = 0; n < N; ++n) {
        detail::CMapRM<T> dout_n(out->grad.data() + int64_t(n) * Co * P, Co, P);
        if (kernel->requires_grad || input->requires_grad)
          detail::im2col(input->value.data() + int64_t(n) * Ci * H * W, Ci, H, W, kh, kw, stride,
                         dilation, pad, Ho, Wo, cols.data());
        if (kernel->requires_grad) {
          detail::MapRM<T> dw(kernel->grad.data(), Co, K);
          dw.noalias() += dout_n * detail::CMapRM<T>(cols.data(), K, P).transpose();
        }
        if (input->requires_grad) {
          detail::MatRM<T> dcols = wmat.transpose() * dout_n;
          detail::col2im_add(dcols.data(), Ci, H, W, kh, kw, stride, dilation, pad, Ho, Wo,
                             input->grad.data() + int64_t(n) * Ci * H * W);
        }
        if (bias && bias->requires_grad)
          for (int co = 0; co < Co; ++co) bias->grad[co] += dout_n.row(co).sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// transpose_conv2d: linear adjoint of conv2d under the same stride/pad.
// Kernel layout [Cin, Cout, kh, kw]; a conv2d kernel [Co, Ci, kh, kw] passed
// here unmodified realizes <conv2d(x), y> == <x, transpose_conv2d(y)>.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> transpose_conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel,
                        const Var<T>& bias, int stride, int pad) {
  detail::check_4d(input, "transpose_conv2d input");
  detail::check_4d(kernel, "transpose_conv2d kernel");
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("transpose_conv2d: stride must be >= 1 and pad >= 0");

  const int N = input->value.dim(0), Ci = input->value.dim(1);
  const int H = input->value.dim(2), W = input->value.dim(3);
  const int Ck = kernel->value.dim(0), Co = kernel->value.dim(1);
  const int kh = kernel->value.dim(2), kw = kernel->value.dim(3);
  if (Ci != Ck)
    throw std::invalid_argument("transpose_conv2d: input channels " + std::to_string(Ci) +
                                " do not match kernel channels " + std::to_string(Ck));
  if (bias && (bias->value.ndim() != 1 || bias->value.dim(0) != Co))
    throw std::invalid_argument("transpose_conv2d: bias shape must be [Cout]");

  const int Ho = (H - 1) * stride - 2 * pad + kh;
  const int Wo = (W - 1) * stride - 2 * pad + kw;
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("transpose_conv2d: empty output");
  const int K = Co * kh * kw;
  const int64_t P = int64_t(H) * W;

  auto out = make_var(Tensor<T>(Shape{N, Co, Ho, Wo}),
                      detail::any_requires(input, kernel, bias));

  // out scatters through the conv geometry whose "output" grid is the input.
  detail::CMapRM<T> m(kernel->value.data(), Ci, K);
  for (int n = 0; n < N; ++n) {
    detail::CMapRM<T> in_n(input->value.data() + int64_t(n) * Ci * P, Ci, P);
    detail::MatRM<T> cols = m.transpose() * in_n;  // [K, H*W]
    detail::col2im_add(cols.data(), Co, Ho, Wo, kh, kw, stride, 1, pad, H, W,
                       out->value.data() + int64_t(n) * Co * Ho * Wo);
    if (bias) {
      detail::MapRM<T> out_n(out->value.data() + int64_t(n) * Co * Ho * Wo, Co, int64_t(Ho) * Wo);
      for (int co = 0; co < Co; ++co) out_n.row(co).array() += bias->value[co];
    }
  }

  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      std::vector<T> cols(static_cast<size_t>(K) * P);
      detail::CMapRM<T> m(kernel->value.data(), Ci, K);
      if (input->requires_grad) input->ensure_grad();
      if (kernel->requires_grad) kernel->ensure_grad();
      if (bias && bias->requires_grad) bias->ensure_grad();
      for (int n = 0; n < N; ++n) {
        detail::im2col(out->grad.data() + int64_t(n) * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride, 1,
                       pad, H, W, cols.data());
        detail::CMapRM<T> dcols(cols.data(), K, P);
        if (input->requires_grad) {
          detail::MapRM<T> din(input->grad.data() + int64_t(n) * Ci * P, Ci, P);
          din.noalias() += m * dcols;
        }
        if (kernel->requires_grad) {
          detail::CMapRM<T> in_n(input->value.data() + int64_t(n) * Ci * P, Ci, P);
          detail::MapRM<T> dm(kernel->grad.data(), Ci, K);
          dm.noalias() += in_n * dcols.transpose();
        }
        if (bias && bias->requires_grad) {
          detail::CMapRM<T> dout_n(out->grad.data() + int64_t(n) * Co * Ho * Wo, Co,
                                   int64_t(Ho) * Wo);
          for (int co = 0; co < Co; ++co) bias->grad[co] += dout_n.row(co).sum();
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d: per-channel normalization over (N,H,W).
// Train mode uses batch statistics (biased variance) and updates the running
// stats by exponential moving average; infer mode uses the running stats.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> batchnorm2d(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                   T momentum = T(0.1), T eps = T(1e-5)) {
  detail::check_4d(x, "batchnorm2d input");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (N * H * W == 0) throw std::invalid_argument("batchnorm2d: zero-size channel plane");
  if (gamma->value.numel() != C || beta->value.numel() != C ||
      running_mean.numel() != C || running_var.numel() != C)
    throw std::invalid_argument("batchnorm2d: per-channel parameter size mismatch");
  const int64_t M = int64_t(N) * H * W;  // reduction size per channel
  if (training && M <= 1)
    throw std::invalid_argument("batchnorm2d: train mode requires batch*H*W > 1 per channel");

  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto inv_std = std::make_shared<std::vector<T>>(C, T(0));
  if (training) {
    for (int c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            double v = x->value.at(n, c, y, xx);
            sum += v;
            sq += v * v;
          }
      double mu = sum / double(M);
      double var = sq / double(M) - mu * mu;
      if (var < 0) var = 0;
      (*mean)[c] = T(mu);
      (*inv_std)[c] = T(1.0 / std::sqrt(var + double(eps)));
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * T(mu);
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * T(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = running_mean[c];
      (*inv_std)[c] = T(1.0 / std::sqrt(double(running_var[c]) + double(eps)));
    }
  }

  auto out = make_var(Tensor<T>(x->value.shape()), detail::any_requires(x, gamma, beta));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*inv_std)[c], g = gamma->value[c], b = beta->value[c];
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out->value.at(n, c, y, xx) = (x->value.at(n, c, y, xx) - mu) * is * g + b;
    }

  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      const int64_t M2 = int64_t(N) * H * W;
      for (int c = 0; c < C; ++c) {
        const T mu = (*mean)[c], is = (*inv_std)[c], g = gamma->value[c];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < N; ++n)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
              double dy = out->grad.at(n, c, y, xx);
              double xhat = (x->value.at(n, c, y, xx) - mu) * is;
              sum_dy += dy;
              sum_dy_xhat += dy * xhat;
            }
        if (gamma->requires_grad) gamma->grad[c] += T(sum_dy_xhat);
        if (beta->requires_grad) beta->grad[c] += T(sum_dy);
        if (!x->requires_grad) continue;
        if (training) {
          const double mean_dy = sum_dy / double(M2);
          const double mean_dy_xhat = sum_dy_xhat / double(M2);
          for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
              for (int xx = 0; xx < W; ++xx) {
                double dy = out->grad.at(n, c, y, xx);
                double xhat = (x->value.at(n, c, y, xx) - mu) * is;
                x->grad.at(n, c, y, xx) +=
                    T(double(g) * double(is) * (dy - mean_dy - xhat * mean_dy_xhat));
              }
        } else {
          for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
              for (int xx = 0; xx < W; ++xx)
                x->grad.at(n, c, y, xx) += out->grad.at(n, c, y, xx) * g * is;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Element-wise activations.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> activation(Tape<T>& tape, const Var<T>& x, Activation kind, T leaky_slope = T(0.2)) {
  auto out = make_var(Tensor<T>(x->value.shape()), x->requires_grad);
  const int64_t n = x->value.numel();
  switch (kind) {
    case Activation::relu:
      for (int64_t i = 0; i < n; ++i) out->value[i] = x->value[i] > T(0) ? x->value[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (int64_t i = 0; i < n; ++i)
        out->value[i] = x->value[i] > T(0) ? x->value[i] : leaky_slope * x->value[i];
      break;
    case Activation::sigmoid:
      for (int64_t i = 0; i < n; ++i) out->value[i] = detail::stable_sigmoid(x->value[i]);
      break;
  }
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      switch (kind) {
        case Activation::relu:
          for (int64_t i = 0; i < n; ++i)
            if (x->value[i] > T(0)) x->grad[i] += out->grad[i];
          break;
        case Activation::leaky_relu:
          for (int64_t i = 0; i < n; ++i)
            x->grad[i] += out->grad[i] * (x->value[i] > T(0) ? T(1) : leaky_slope);
          break;
        case Activation::sigmoid:
          for (int64_t i = 0; i < n; ++i) {
            T y = out->value[i];
            x->grad[i] += out->grad[i] * y * (T(1) - y);
          }
          break;
      }
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  return activation(tape, x, Activation::relu);
}
template <typename T>
Var<T> leaky_relu(Tape<T>& tape, const Var<T>& x, T slope = T(0.2)) {
  return activation(tape, x, Activation::leaky_relu, slope);
}
template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  return activation(tape, x, Activation::sigmoid);
}

// ---------------------------------------------------------------------------
// dropout: train mode zeroes each element with probability p and scales
// survivors by 1/(1-p); infer mode is the identity.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  const int64_t n = x->value.numel();
  if (!training || p == 0.0) {
    auto out = make_var(x->value, x->requires_grad);
    if (out->requires_grad) {
      tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
        x->ensure_grad();
        for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i];
      });
    }
    return out;
  }
  auto keep = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n));
  const T scale = T(1.0 / (1.0 - p));
  auto out = make_var(Tensor<T>(x->value.shape()), x->requires_grad);
  for (int64_t i = 0; i < n; ++i) {
    bool k = !rng.bernoulli(p);
    (*keep)[static_cast<size_t>(i)] = k;
    out->value[i] = k ? x->value[i] * scale : T(0);
  }
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if ((*keep)[static_cast<size_t>(i)]) x->grad[i] += out->grad[i] * scale;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear_upsample: align-corners-false resampling to (out_h, out_w).
// ---------------------------------------------------------------------------
namespace detail {
struct BilinearTap {
  int lo;
  double frac;  // weight of hi = frac, of lo = 1-frac
};
inline BilinearTap bilinear_tap(int dst, int in_extent, double scale) {
  double src = (dst + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  double max_src = double(in_extent - 1);
  if (src > max_src) src = max_src;
  int lo = static_cast<int>(src);
  if (lo > in_extent - 2) lo = in_extent > 1 ? in_extent - 2 : 0;
  double frac = in_extent > 1 ? src - lo : 0.0;
  return {lo, frac};
}
}  // namespace detail

template <typename T>
Var<T> bilinear_upsample(Tape<T>& tape, const Var<T>& x, int out_h, int out_w) {
  detail::check_4d(x, "bilinear_upsample input");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_upsample: output extents must be >= 1");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const double sy = double(H) / out_h, sx = double(W) / out_w;

  auto out = make_var(Tensor<T>(Shape{N, C, out_h, out_w}), x->requires_grad);
  for (int oy = 0; oy < out_h; ++oy) {
    auto ty = detail::bilinear_tap(oy, H, sy);
    for (int ox = 0; ox < out_w; ++ox) {
      auto tx = detail::bilinear_tap(ox, W, sx);
      const int y1 = H > 1 ? ty.lo + 1 : ty.lo;
      const int x1 = W > 1 ? tx.lo + 1 : tx.lo;
      const T w00 = T((1 - ty.frac) * (1 - tx.frac)), w01 = T((1 - ty.frac) * tx.frac);
      const T w10 = T(ty.frac * (1 - tx.frac)), w11 = T(ty.frac * tx.frac);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          out->value.at(n, c, oy, ox) =
              w00 * x->value.at(n, c, ty.lo, tx.lo) + w01 * x->value.at(n, c, ty.lo, x1) +
              w10 * x->value.at(n, c, y1, tx.lo) + w11 * x->value.at(n, c, y1, x1);
    }
  }
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      for (int oy = 0; oy < out_h; ++oy) {
        auto ty = detail::bilinear_tap(oy, H, sy);
        for (int ox = 0; ox < out_w; ++ox) {
          auto tx = detail::bilinear_tap(ox, W, sx);
          const int y1 = H > 1 ? ty.lo + 1 : ty.lo;
          const int x1 = W > 1 ? tx.lo + 1 : tx.lo;
          const T w00 = T((1 - ty.frac) * (1 - tx.frac)), w01 = T((1 - ty.frac) * tx.frac);
          const T w10 = T(ty.frac * (1 - tx.frac)), w11 = T(ty.frac * tx.frac);
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const T g = out->grad.at(n, c, oy, ox);
              x->grad.at(n, c, ty.lo, tx.lo) += w00 * g;
              x->grad.at(n, c, ty.lo, x1) += w01 * g;
              x->grad.at(n, c, y1, tx.lo) += w10 * g;
              x->grad.at(n, c, y1, x1) += w11 * g;
            }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat_channels: [N,Ca,H,W] + [N,Cb,H,W] -> [N,Ca+Cb,H,W], a first.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  detail::check_4d(a, "concat_channels a");
  detail::check_4d(b, "concat_channels b");
  const int N = a->value.dim(0), Ca = a->value.dim(1), H = a->value.dim(2), W = a->value.dim(3);
  const int Cb = b->value.dim(1);
  if (b->value.dim(0) != N || b->value.dim(2) != H || b->value.dim(3) != W)
    throw std::invalid_argument("concat_channels: batch/spatial extents must match, got " +
                                shape_str(a->value.shape()) + " and " + shape_str(b->value.shape()));
  auto out = make_var(Tensor<T>(Shape{N, Ca + Cb, H, W}), detail::any_requires(a, b));
  const int64_t plane = int64_t(H) * W;
  for (int n = 0; n < N; ++n) {
    T* dst = out->value.data() + int64_t(n) * (Ca + Cb) * plane;
    std::copy_n(a->value.data() + int64_t(n) * Ca * plane, Ca * plane, dst);
    std::copy_n(b->value.data() + int64_t(n) * Cb * plane, Cb * plane, dst + Ca * plane);
  }
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* src = out->grad.data() + int64_t(n) * (Ca + Cb) * plane;
        if (a->requires_grad) {
          T* da = a->grad.data() + int64_t(n) * Ca * plane;
          for (int64_t i = 0; i < Ca * plane; ++i) da[i] += src[i];
        }
        if (b->requires_grad) {
          T* db = b->grad.data() + int64_t(n) * Cb * plane;
          for (int64_t i = 0; i < Cb * plane; ++i) db[i] += src[Ca * plane + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Element-wise and reduction primitives used by losses and residual blocks.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                                shape_str(b->value.shape()));
  const int64_t n = a->value.numel();
  auto out = make_var(Tensor<T>(a->value.shape()), detail::any_requires(a, b));
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] + b->value[i];
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("sub: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                                shape_str(b->value.shape()));
  const int64_t n = a->value.numel();
  auto out = make_var(Tensor<T>(a->value.shape()), detail::any_requires(a, b));
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] - b->value[i];
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) b->grad[i] -= out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                                shape_str(b->value.shape()));
  const int64_t n = a->value.numel();
  auto out = make_var(Tensor<T>(a->value.shape()), detail::any_requires(a, b));
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] * b->value[i];
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->value[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->value[i];
      }
    });
  }
  return out;
}

/// y = scale * x + shift, scalar coefficients.
template <typename T>
Var<T> affine(Tape<T>& tape, const Var<T>& x, T scale, T shift) {
  const int64_t n = x->value.numel();
  auto out = make_var(Tensor<T>(x->value.shape()), x->requires_grad);
  for (int64_t i = 0; i < n; ++i) out->value[i] = scale * x->value[i] + shift;
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * scale;
    });
  }
  return out;
}

template <typename T>
Var<T> abs_op(Tape<T>& tape, const Var<T>& x) {
  const int64_t n = x->value.numel();
  auto out = make_var(Tensor<T>(x->value.shape()), x->requires_grad);
  for (int64_t i = 0; i < n; ++i) out->value[i] = std::abs(x->value[i]);
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        T s = x->value[i] > T(0) ? T(1) : (x->value[i] < T(0) ? T(-1) : T(0));
        x->grad[i] += out->grad[i] * s;
      }
    });
  }
  return out;
}

template <typename T>
Var<T> sum_all(Tape<T>& tape, const Var<T>& x) {
  const int64_t n = x->value.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += double(x->value[i]);
  auto out = make_scalar(T(acc), x->requires_grad);
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      const T g = out->grad[0];
      for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
    });
  }
  return out;
}

template <typename T>
Var<T> mean_all(Tape<T>& tape, const Var<T>& x) {
  const int64_t n = x->value.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += double(x->value[i]);
  auto out = make_scalar(T(acc / double(n)), x->requires_grad);
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      const T g = out->grad[0] / T(n);
      for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
    });
  }
  return out;
}

/// Global average pooling: [N,C,H,W] -> [N,C,1,1].
template <typename T>
Var<T> mean_spatial(Tape<T>& tape, const Var<T>& x) {
  detail::check_4d(x, "mean_spatial input");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t plane = int64_t(H) * W;
  auto out = make_var(Tensor<T>(Shape{N, C, 1, 1}), x->requires_grad);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0;
      const T* src = x->value.data() + (int64_t(n) * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) acc += double(src[i]);
      out->value.at(n, c, 0, 0) = T(acc / double(plane));
    }
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      x->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T g = out->grad.at(n, c, 0, 0) / T(plane);
          T* dst = x->grad.data() + (int64_t(n) * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) dst[i] += g;
        }
    });
  }
  return out;
}

/// a / b on scalars.
template <typename T>
Var<T> scalar_div(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (a->value.numel() != 1 || b->value.numel() != 1)
    throw std::invalid_argument("scalar_div: both operands must be scalars");
  auto out = make_scalar(a->value[0] / b->value[0], detail::any_requires(a, b));
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      const T g = out->grad[0], av = a->value[0], bv = b->value[0];
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad[0] += g / bv;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad[0] -= g * av / (bv * bv);
      }
    });
  }
  return out;
}

/// Mean binary cross-entropy of logits against a constant target in {0,1},
/// computed in the overflow-safe form max(x,0) - x*z + log(1+exp(-|x|)).
template <typename T>
Var<T> bce_with_logits_mean(Tape<T>& tape, const Var<T>& logits, T target) {
  if (!logits->value.all_finite())
    throw std::invalid_argument("bce_with_logits_mean: non-finite logits");
  const int64_t n = logits->value.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double x = double(logits->value[i]);
    acc += std::max(x, 0.0) - x * double(target) + std::log1p(std::exp(-std::abs(x)));
  }
  auto out = make_scalar(T(acc / double(n)), logits->requires_grad);
  if (out->requires_grad) {
    tape.record([=]() {
      if (!out->grad.numel()) return;  // no gradient reached this node
      logits->ensure_grad();
      const T g = out->grad[0] / T(n);
      for (int64_t i = 0; i < n; ++i)
        logits->grad[i] += g * (detail::stable_sigmoid(logits->value[i]) - target);
    });
  }
  return out;
}

/// Cuts the tape: returns a no-grad leaf holding a copy of the value.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return make_var(x->value, false);
}

}  // namespace branchseg
