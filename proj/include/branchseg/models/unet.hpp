#pragma once

#include <string>
#include <vector>

#include "branchseg/models/layers.hpp"
#include "branchseg/models/spec.hpp"

namespace branchseg {

/// U-shaped segmentation net with a residual encoder. The stem keeps full
/// resolution; each of the 4 encoder stages halves it. Decoder stages
/// bilinearly upsample, concatenate the matching encoder feature, and fuse
/// with a double conv.
template <typename T>
struct UNet {
  struct DecStage {
    ConvBNAct<T> fuse1, fuse2;
  };

  ConvBNAct<T> stem;
  std::vector<std::vector<ResidualBlock<T>>> stages;
  std::vector<DecStage> dec;
  Conv2dLayer<T> head;

  UNet() = default;

  UNet(Registry<T>& reg, const ModelSpec& spec, Rng& rng) {
    const int W = spec.base_width;
    stem = ConvBNAct<T>(reg, "stem", spec.input_channels, W, 3, 1, 1, Activation::relu, rng);

    const int widths[4] = {W, 2 * W, 4 * W, 8 * W};
    int cin = W;
    for (int s = 0; s < 4; ++s) {
      std::vector<ResidualBlock<T>> blocks;
      for (int b = 0; b < spec.stage_depths[s]; ++b) {
        const std::string name = "enc" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
        blocks.emplace_back(reg, name, b == 0 ? cin : widths[s], widths[s], b == 0 ? 2 : 1, rng);
      }
      cin = widths[s];
      stages.push_back(std::move(blocks));
    }

    // decoder stage d consumes (deeper features, skip at the matching size)
    const int skip_ch[4] = {4 * W, 2 * W, W, W};  // enc3, enc2, enc1, stem
    const int out_ch[4] = {4 * W, 2 * W, W, W};
    int deep = 8 * W;
    for (int d = 0; d < 4; ++d) {
      DecStage st;
      const std::string name = "dec" + std::to_string(d + 1);
      st.fuse1 = ConvBNAct<T>(reg, name + ".fuse1", deep + skip_ch[d], out_ch[d], 3, 1, 1,
                              Activation::relu, rng);
      st.fuse2 = ConvBNAct<T>(reg, name + ".fuse2", out_ch[d], out_ch[d], 3, 1, 1,
                              Activation::relu, rng);
      dec.push_back(std::move(st));
      deep = out_ch[d];
    }
    head = Conv2dLayer<T>(reg, "head", W, 1, 1, 1, 0, rng, Gain::sigmoid);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, bool training) const {
    auto s0 = stem(tape, x, training);
    std::vector<Var<T>> feats{s0};
    Var<T> h = s0;
    for (const auto& stage : stages) {
      for (const auto& block : stage) h = block(tape, h, training);
      feats.push_back(h);
    }
    // feats: [stem, enc1, enc2, enc3, enc4] at strides [1, 2, 4, 8, 16]
    for (int d = 0; d < 4; ++d) {
      const Var<T>& skip = feats[3 - d];
      h = bilinear_upsample(tape, h, skip->value.dim(2), skip->value.dim(3));
      h = concat_channels(tape, h, skip);
      h = dec[d].fuse1(tape, h, training);
      h = dec[d].fuse2(tape, h, training);
    }
    return sigmoid(tape, head(tape, h));
  }
};

}  // namespace branchseg
