#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "branchseg/models/layers.hpp"
#include "branchseg/models/spec.hpp"

namespace branchseg {

/// Atrous-pyramid segmentation net. The residual encoder stops at stride 8
/// (the last stage trades stride for dilation); the pyramid runs parallel
/// atrous branches plus a global-pooling branch; the decoder upsamples in
/// three steps, merging low-level skips at stride 4 and stride 2, and ends
/// with a full-resolution refinement so masks a pixel or two wide survive.
template <typename T>
struct DeepLab {
  ConvBNAct<T> stem;
  std::vector<std::vector<ResidualBlock<T>>> stages;  // stage2 s2, stage3 s2, stage4 dilated
  std::vector<ConvBNAct<T>> aspp_branches;            // atrous 3x3 at the scaled rates
  ConvBNAct<T> aspp_pool_proj;                        // 1x1 after global pooling
  ConvBNAct<T> aspp_fuse;                             // 1x1 over the concatenation
  ConvBNAct<T> skip_reduce;                           // 1x1 on the stride-4 feature
  ConvBNAct<T> skip2_reduce;                          // 1x1 on the stride-2 stem feature
  ConvBNAct<T> dec1, dec2;                            // stride 4
  ConvBNAct<T> dec3;                                  // stride 2, after the second skip
  ConvBNAct<T> dec4;                                  // full resolution
  Conv2dLayer<T> head;
  std::vector<int> scaled_rates;

  DeepLab() = default;

  /// Rates are proportional to input size (rounded, floor 1) so the dilated
  /// kernel always fits the stride-8 feature map.
  static std::vector<int> scale_rates(const std::vector<int>& rates, int input_size) {
    std::vector<int> out;
    for (int r : rates) out.push_back(std::max(1, (r * input_size + 128) / 256));
    return out;
  }

  DeepLab(Registry<T>& reg, const ModelSpec& spec, Rng& rng) {
    const int W = spec.base_width;
    stem = ConvBNAct<T>(reg, "stem", spec.input_channels, W, 3, 2, 1, Activation::relu, rng);

    const int widths[3] = {2 * W, 4 * W, 8 * W};
    const int strides[3] = {2, 2, 1};
    const int dilations[3] = {1, 1, 2};
    int cin = W;
    for (int s = 0; s < 3; ++s) {
      std::vector<ResidualBlock<T>> blocks;
      for (int b = 0; b < spec.stage_depths[s + 1]; ++b) {
        const std::string name = "enc" + std::to_string(s + 2) + ".block" + std::to_string(b + 1);
        blocks.emplace_back(reg, name, b == 0 ? cin : widths[s], widths[s],
                            b == 0 ? strides[s] : 1, rng, b == 0 ? 1 : dilations[s]);
      }
      cin = widths[s];
      stages.push_back(std::move(blocks));
    }

    scaled_rates = scale_rates(spec.dilation_rates, spec.input_size);
    const int feat = spec.input_size / 8;
    check_shape(feat >= 2, "input too small for a stride-8 encoder");
    for (int r : scaled_rates)
      check_shape(r < feat, "dilation rate " + std::to_string(r) +
                                " leaves no in-bounds taps on the " + std::to_string(feat) + "x" +
                                std::to_string(feat) + " feature map");

    const int branch_ch = 2 * W;
    for (size_t i = 0; i < scaled_rates.size(); ++i) {
      const int r = scaled_rates[i];
      aspp_branches.emplace_back(reg, "aspp.branch" + std::to_string(i + 1), 8 * W, branch_ch, 3,
                                 1, r, Activation::relu, rng, r);
    }
    aspp_pool_proj =
        ConvBNAct<T>(reg, "aspp.pool", 8 * W, branch_ch, 1, 1, 0, Activation::relu, rng);
    aspp_fuse = ConvBNAct<T>(reg, "aspp.fuse", int(scaled_rates.size() + 1) * branch_ch, branch_ch,
                             1, 1, 0, Activation::relu, rng);
    skip_reduce = ConvBNAct<T>(reg, "skip_reduce", 2 * W, W, 1, 1, 0, Activation::relu, rng);
    const int half = std::max(1, W / 2);
    skip2_reduce = ConvBNAct<T>(reg, "skip2_reduce", W, half, 1, 1, 0, Activation::relu, rng);
    dec1 = ConvBNAct<T>(reg, "dec1", branch_ch + W, 2 * W, 3, 1, 1, Activation::relu, rng);
    dec2 = ConvBNAct<T>(reg, "dec2", 2 * W, 2 * W, 3, 1, 1, Activation::relu, rng);
    dec3 = ConvBNAct<T>(reg, "dec3", 2 * W + half, W, 3, 1, 1, Activation::relu, rng);
    dec4 = ConvBNAct<T>(reg, "dec4", W, W, 3, 1, 1, Activation::relu, rng);
    head = Conv2dLayer<T>(reg, "head", W, 1, 1, 1, 0, rng, Gain::sigmoid);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, bool training) const {
    const int H = x->value.dim(2), W_in = x->value.dim(3);
    auto h = stem(tape, x, training);
    const Var<T> half_res = h;  // stride-2 tap after the stem
    Var<T> low;                 // stride-4 tap after stage2
    for (size_t s = 0; s < stages.size(); ++s) {
      for (const auto& block : stages[s]) h = block(tape, h, training);
      if (s == 0) low = h;
    }

    std::vector<Var<T>> branches;
    for (const auto& b : aspp_branches) branches.push_back(b(tape, h, training));
    auto pooled = aspp_pool_proj(tape, mean_spatial(tape, h), training);
    branches.push_back(bilinear_upsample(tape, pooled, h->value.dim(2), h->value.dim(3)));
    Var<T> cat = branches[0];
    for (size_t i = 1; i < branches.size(); ++i) cat = concat_channels(tape, cat, branches[i]);
    auto fused = aspp_fuse(tape, cat, training);

    auto up = bilinear_upsample(tape, fused, low->value.dim(2), low->value.dim(3));
    auto merged = concat_channels(tape, up, skip_reduce(tape, low, training));
    auto d = dec2(tape, dec1(tape, merged, training), training);
    auto up2 = bilinear_upsample(tape, d, half_res->value.dim(2), half_res->value.dim(3));
    auto merged2 = concat_channels(tape, up2, skip2_reduce(tape, half_res, training));
    auto d2 = dec3(tape, merged2, training);
    auto full = dec4(tape, bilinear_upsample(tape, d2, H, W_in), training);
    return sigmoid(tape, head(tape, full));
  }
};

}  // namespace branchseg
