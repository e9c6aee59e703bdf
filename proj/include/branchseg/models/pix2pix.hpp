#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "branchseg/models/layers.hpp"
#include "branchseg/models/spec.hpp"

namespace branchseg {

/// Encoder-decoder generator with skip connections. Encoder block i halves the
/// spatial size; decoder block j doubles it and consumes the concatenation of
/// the previous decoder output with the same-size encoder output.
template <typename T>
struct Pix2PixGenerator {
  struct EncBlock {
    Conv2dLayer<T> conv;
    BatchNorm2dLayer<T> bn;
  };
  struct DecBlock {
    TConv2dLayer<T> tconv;
    BatchNorm2dLayer<T> bn;
    bool dropout = false;
  };

  std::vector<EncBlock> enc;
  std::vector<DecBlock> dec;
  Conv2dLayer<T> head;

  Pix2PixGenerator() = default;

  Pix2PixGenerator(Registry<T>& reg, const ModelSpec& spec, Rng& rng) {
    const int n = spec.generator_blocks;
    const int W = spec.base_width;
    auto width = [&](int level) { return W * std::min(1 << (level - 1), 8); };

    for (int i = 1; i <= n; ++i) {
      EncBlock b;
      const int cin = i == 1 ? spec.input_channels : width(i - 1);
      b.conv = Conv2dLayer<T>(reg, "enc" + std::to_string(i) + ".conv", cin, width(i), 4, 2, 1,
                              rng, Gain::leaky_relu, 1, /*with_bias=*/false);
      b.bn = BatchNorm2dLayer<T>(reg, "enc" + std::to_string(i) + ".bn", width(i));
      enc.push_back(std::move(b));
    }
    for (int j = 1; j <= n; ++j) {
      DecBlock b;
      const int cin = j == 1 ? width(n) : 2 * width(n - j + 1);
      const int cout = j == n ? W : width(n - j);
      b.tconv = TConv2dLayer<T>(reg, "dec" + std::to_string(j) + ".tconv", cin, cout, 4, 2, 1, rng,
                                Gain::relu);
      b.bn = BatchNorm2dLayer<T>(reg, "dec" + std::to_string(j) + ".bn", cout);
      b.dropout = j <= 3;
      dec.push_back(std::move(b));
    }
    head = Conv2dLayer<T>(reg, "head", W, 1, 1, 1, 0, rng, Gain::sigmoid);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, bool training, Rng& dropout_rng) const {
    const int n = int(enc.size());
    std::vector<Var<T>> skips;  // skips[i] = output of encoder block i+1
    Var<T> h = x;
    for (int i = 0; i < n; ++i) {
      h = leaky_relu(tape, enc[i].bn(tape, enc[i].conv(tape, h), training));
      skips.push_back(h);
    }
    for (int j = 0; j < n; ++j) {
      h = dec[j].bn(tape, dec[j].tconv(tape, h), training);
      if (dec[j].dropout) h = dropout(tape, h, 0.5, training, dropout_rng);
      h = relu(tape, h);
      if (j < n - 1) h = concat_channels(tape, h, skips[n - 2 - j]);
    }
    return sigmoid(tape, head(tape, h));
  }
};

/// Patch discriminator: 3 stride-2 blocks then 2 stride-1 convolutions; the
/// output is an unbounded logit per receptive-field patch.
template <typename T>
struct PatchGAN {
  ConvBNAct<T> down1, down2, down3, flat;
  Conv2dLayer<T> out_conv;

  PatchGAN() = default;

  PatchGAN(Registry<T>& reg, const ModelSpec& spec, Rng& rng) {
    const int W = spec.base_width;
    down1 = ConvBNAct<T>(reg, "down1", spec.input_channels, W, 4, 2, 1, Activation::leaky_relu, rng);
    down2 = ConvBNAct<T>(reg, "down2", W, 2 * W, 4, 2, 1, Activation::leaky_relu, rng);
    down3 = ConvBNAct<T>(reg, "down3", 2 * W, 4 * W, 4, 2, 1, Activation::leaky_relu, rng);
    flat = ConvBNAct<T>(reg, "flat", 4 * W, 8 * W, 4, 1, 1, Activation::leaky_relu, rng);
    out_conv = Conv2dLayer<T>(reg, "out", 8 * W, 1, 4, 1, 1, rng, Gain::linear);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, bool training) const {
    auto h = down1(tape, x, training);
    h = down2(tape, h, training);
    h = down3(tape, h, training);
    h = flat(tape, h, training);
    return out_conv(tape, h);  // logits
  }
};

}  // namespace branchseg
