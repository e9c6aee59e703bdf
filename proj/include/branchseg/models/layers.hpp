#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "branchseg/autodiff/ops.hpp"
#include "branchseg/core/rng.hpp"

namespace branchseg {

/// Ordered registry of named parameters and persistent buffers (BN running
/// stats). Registration order is the serialization order.
template <typename T>
struct Registry {
  std::vector<std::pair<std::string, Var<T>>> params;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>> buffers;

  Var<T> add_param(const std::string& name, Tensor<T> init) {
    auto v = make_var(std::move(init), true);
    params.emplace_back(name, v);
    return v;
  }
  std::shared_ptr<Tensor<T>> add_buffer(const std::string& name, Tensor<T> init) {
    auto b = std::make_shared<Tensor<T>>(std::move(init));
    buffers.emplace_back(name, b);
    return b;
  }
  Var<T> find_param(const std::string& name) const {
    for (auto& [n, v] : params)
      if (n == name) return v;
    return {};
  }
};

/// Gain for centered-uniform fan-in init, matched to the following activation.
enum class Gain { linear, relu, leaky_relu, sigmoid };

namespace detail {

inline double gain_value(Gain g) {
  switch (g) {
    case Gain::relu: return std::sqrt(2.0);
    case Gain::leaky_relu: return std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
    default: return 1.0;
  }
}

template <typename T>
Tensor<T> uniform_init(const Shape& shape, int64_t fan_in, Gain gain, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = gain_value(gain) * std::sqrt(3.0 / double(std::max<int64_t>(fan_in, 1)));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

template <typename T>
struct Conv2dLayer {
  Var<T> weight, bias;
  int stride = 1, dilation = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(Registry<T>& reg, const std::string& name, int cin, int cout, int k, int stride_,
              int pad_, Rng& rng, Gain gain = Gain::linear, int dilation_ = 1, bool with_bias = true)
      : stride(stride_), dilation(dilation_), pad(pad_) {
    weight = reg.add_param(name + ".weight",
                           detail::uniform_init<T>({cout, cin, k, k}, int64_t(cin) * k * k, gain, rng));
    if (with_bias) bias = reg.add_param(name + ".bias", Tensor<T>({cout}));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    return conv2d(tape, x, weight, bias, stride, dilation, pad);
  }
};

template <typename T>
struct TConv2dLayer {
  Var<T> weight, bias;  // weight layout [Cin, Cout, kh, kw]
  int stride = 1, pad = 0;

  TConv2dLayer() = default;
  TConv2dLayer(Registry<T>& reg, const std::string& name, int cin, int cout, int k, int stride_,
               int pad_, Rng& rng, Gain gain = Gain::linear)
      : stride(stride_), pad(pad_) {
    // each output element gathers roughly (k/stride)^2 taps per input channel
    const int64_t fan = std::max<int64_t>(1, int64_t(cin) * k * k / (int64_t(stride_) * stride_));
    weight = reg.add_param(name + ".weight",
                           detail::uniform_init<T>({cin, cout, k, k}, fan, gain, rng));
    bias = reg.add_param(name + ".bias", Tensor<T>({cout}));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    return transpose_conv2d(tape, x, weight, bias, stride, pad);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  Var<T> gamma, beta;
  std::shared_ptr<Tensor<T>> running_mean, running_var;

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(Registry<T>& reg, const std::string& name, int channels) {
    gamma = reg.add_param(name + ".gamma", Tensor<T>::ones({channels}));
    beta = reg.add_param(name + ".beta", Tensor<T>({channels}));
    running_mean = reg.add_buffer(name + ".running_mean", Tensor<T>({channels}));
    running_var = reg.add_buffer(name + ".running_var", Tensor<T>::ones({channels}));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, bool training) const {
    return batchnorm2d(tape, x, gamma, beta, *running_mean, *running_var, training);
  }
};

/// Conv -> BN -> activation, the downsampling unit shared by the GAN nets.
template <typename T>
struct ConvBNAct {
  Conv2dLayer<T> conv;
  BatchNorm2dLayer<T> bn;
  Activation act;

  ConvBNAct() = default;
  ConvBNAct(Registry<T>& reg, const std::string& name, int cin, int cout, int k, int stride,
            int pad, Activation act_, Rng& rng, int dilation = 1)
      : act(act_) {
    Gain gain = act_ == Activation::relu ? Gain::relu
                : act_ == Activation::leaky_relu ? Gain::leaky_relu
                                                 : Gain::sigmoid;
    conv = Conv2dLayer<T>(reg, name + ".conv", cin, cout, k, stride, pad, rng, gain, dilation,
                          /*with_bias=*/false);
    bn = BatchNorm2dLayer<T>(reg, name + ".bn", cout);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, bool training) const {
    return activation(tape, bn(tape, conv(tape, x), training), act);
  }
};

/// Two 3x3 convs with a shortcut; the shortcut is a projection when stride or
/// channel count changes, otherwise the identity.
template <typename T>
struct ResidualBlock {
  ConvBNAct<T> conv1;
  Conv2dLayer<T> conv2;
  BatchNorm2dLayer<T> bn2;
  Conv2dLayer<T> proj;  // empty weight when the shortcut is the identity
  BatchNorm2dLayer<T> proj_bn;
  bool has_proj = false;

  ResidualBlock() = default;
  ResidualBlock(Registry<T>& reg, const std::string& name, int cin, int cout, int stride, Rng& rng,
                int dilation = 1)
      : conv1(reg, name + ".conv1", cin, cout, 3, stride, dilation, Activation::relu, rng, dilation) {
    conv2 = Conv2dLayer<T>(reg, name + ".conv2", cout, cout, 3, 1, dilation, rng, Gain::linear,
                           dilation, /*with_bias=*/false);
    bn2 = BatchNorm2dLayer<T>(reg, name + ".bn2", cout);
    has_proj = (stride != 1 || cin != cout);
    if (has_proj) {
      proj = Conv2dLayer<T>(reg, name + ".proj", cin, cout, 1, stride, 0, rng, Gain::linear, 1,
                            /*with_bias=*/false);
      proj_bn = BatchNorm2dLayer<T>(reg, name + ".proj_bn", cout);
    }
  }

  Var<T> pre_activation(Tape<T>& tape, const Var<T>& x, bool training) const {
    auto main = bn2(tape, conv2(tape, conv1(tape, x, training)), training);
    auto shortcut = has_proj ? proj_bn(tape, proj(tape, x), training) : x;
    return add(tape, main, shortcut);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, bool training) const {
    return relu(tape, pre_activation(tape, x, training));
  }
};

}  // namespace branchseg
