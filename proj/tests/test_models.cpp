#include <catch2/catch_amalgamated.hpp>
#include <cstdio>

#include "branchseg/models/model.hpp"
#include "branchseg/models/serialize.hpp"
#include "oracles.hpp"

using namespace branchseg;

namespace {

Tensor<float> random_batch(int n, int c, int h, int w, uint64_t seed) {
  Tensor<float> t({n, c, h, w});
  Rng rng(seed);
  oracle::fill_uniform(t, rng, 0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("generator keeps spatial size and emits probabilities") {
  ModelSpec spec = tiny_spec(ModelKind::pix2pix_generator);
  spec.base_width = 4;
  auto m = build_model<float>(spec, 1);

  Tape<float> tape;
  auto x = make_var(Tensor<float>({2, 4, 64, 64}));  // zeros
  auto y = m.forward(tape, x);
  REQUIRE(y->value.shape() == Shape{2, 1, 64, 64});
  for (int64_t i = 0; i < y->value.numel(); ++i) {
    CHECK(y->value[i] > 0.0f);
    CHECK(y->value[i] < 1.0f);
  }
}

TEST_CASE("generator runs its full-depth configuration") {
  ModelSpec spec = full_spec(ModelKind::pix2pix_generator);
  spec.base_width = 1;  // narrow: this exercises the 8-block spatial funnel only
  auto m = build_model<float>(spec, 2);
  Tape<float> tape;
  auto x = make_var(random_batch(1, 4, 256, 256, 5));
  auto y = m.forward(tape, x);
  CHECK(y->value.shape() == Shape{1, 1, 256, 256});
}

TEST_CASE("generator rejects too many blocks for the input size") {
  ModelSpec spec = tiny_spec(ModelKind::pix2pix_generator);
  spec.generator_blocks = 7;  // 64 / 2^7 < 1
  CHECK_THROWS_AS(build_model<float>(spec, 1), std::invalid_argument);
}

TEST_CASE("discriminator patch grids") {
  ModelSpec big = full_spec(ModelKind::patchgan_discriminator);
  big.base_width = 2;
  auto m = build_model<float>(big, 3);
  Tape<float> tape;
  auto x = make_var(random_batch(1, 5, 256, 256, 7));
  auto y = m.forward(tape, x);
  CHECK(y->value.shape() == Shape{1, 1, 30, 30});

  ModelSpec small = tiny_spec(ModelKind::patchgan_discriminator);
  small.base_width = 4;
  auto md = build_model<float>(small, 3);
  Tape<float> t2;
  auto ys = md.forward(t2, make_var(random_batch(2, 5, 64, 64, 8)));
  REQUIRE(ys->value.ndim() == 4);
  CHECK(ys->value.dim(2) == 6);
  CHECK(ys->value.dim(3) == 6);
  CHECK(ys->value.dim(2) >= 4);

  // logits are unbounded: with centered init roughly half land below zero
  bool any_nonpositive = false;
  for (int64_t i = 0; i < ys->value.numel(); ++i)
    if (ys->value[i] <= 0.0f) any_nonpositive = true;
  CHECK(any_nonpositive);
}

TEST_CASE("unet output shape and deterministic parameter count") {
  ModelSpec spec = tiny_spec(ModelKind::unet);
  spec.base_width = 4;
  spec.input_size = 32;
  spec.stage_depths = {1, 1, 1, 1};
  auto a = build_model<float>(spec, 11);
  auto b = build_model<float>(spec, 11);
  CHECK(a.parameter_count() == b.parameter_count());
  REQUIRE(a.registry.params.size() == b.registry.params.size());
  for (size_t i = 0; i < a.registry.params.size(); ++i) {
    CHECK(a.registry.params[i].first == b.registry.params[i].first);
    CHECK(a.registry.params[i].second->value == b.registry.params[i].second->value);
  }
  auto c = build_model<float>(spec, 12);
  bool differs = false;
  for (size_t i = 0; i < a.registry.params.size() && !differs; ++i)
    differs = !(a.registry.params[i].second->value == c.registry.params[i].second->value);
  CHECK(differs);

  Tape<float> tape;
  auto y = a.forward(tape, make_var(random_batch(2, 4, 32, 32, 9)));
  CHECK(y->value.shape() == Shape{2, 1, 32, 32});
}

TEST_CASE("residual block with zero conv weights is the identity before activation") {
  for (bool training : {false, true}) {
    Registry<float> reg;
    Rng rng(21);
    ResidualBlock<float> block(reg, "blk", 3, 3, 1, rng);
    REQUIRE_FALSE(block.has_proj);
    reg.find_param("blk.conv1.conv.weight")->value.fill(0.0f);
    reg.find_param("blk.conv2.weight")->value.fill(0.0f);

    Tape<float> tape;
    auto x = make_var(random_batch(2, 3, 5, 5, 22));
    auto pre = block.pre_activation(tape, x, training);
    INFO("training=" << training);
    CHECK(oracle::max_abs_diff(pre->value, x->value) < 1e-6);
  }
}

TEST_CASE("deeplab rate scaling tracks input size") {
  using DL = DeepLab<float>;
  CHECK(DL::scale_rates({1, 6, 12, 18}, 256) == std::vector<int>{1, 6, 12, 18});
  CHECK(DL::scale_rates({1, 6, 12, 18}, 128) == std::vector<int>{1, 3, 6, 9});
  CHECK(DL::scale_rates({1, 6, 12, 18}, 64) == std::vector<int>{1, 2, 3, 5});
}

TEST_CASE("deeplab pyramid structure and output shape") {
  ModelSpec spec = tiny_spec(ModelKind::deeplab);
  spec.base_width = 4;
  spec.input_size = 32;
  spec.stage_depths = {1, 1, 1, 1};
  auto m = build_model<float>(spec, 31);
  auto& net = std::get<DeepLab<float>>(m.net);
  CHECK(net.aspp_branches.size() == spec.dilation_rates.size());
  // fused 1x1 consumes every atrous branch plus the pooled branch
  auto fuse_w = m.registry.find_param("aspp.fuse.conv.weight");
  REQUIRE(fuse_w);
  CHECK(fuse_w->value.dim(1) == int(spec.dilation_rates.size() + 1) * 2 * spec.base_width);

  Tape<float> tape;
  auto y = m.forward(tape, make_var(random_batch(2, 4, 32, 32, 33)));
  CHECK(y->value.shape() == Shape{2, 1, 32, 32});
}

TEST_CASE("deeplab atrous branch at rate 1 equals a plain convolution") {
  ModelSpec spec = tiny_spec(ModelKind::deeplab);
  spec.base_width = 4;
  spec.input_size = 32;
  spec.dilation_rates = {1, 2, 3};  // all collapse to 1 at this size
  spec.stage_depths = {1, 1, 1, 1};
  auto m = build_model<float>(spec, 37);
  auto& net = std::get<DeepLab<float>>(m.net);
  for (int r : net.scaled_rates) REQUIRE(r == 1);

  auto feat = random_batch(1, 8 * spec.base_width, 4, 4, 41).cast<double>();
  for (auto& branch : net.aspp_branches) {
    Tape<double> tape;
    auto w = branch.conv.weight->value.template cast<double>();
    auto y = conv2d(tape, make_var(feat), make_var(w), Var<double>{}, 1, 1, 1);
    auto ref = oracle::conv2d_ref<double>(feat, w, nullptr, 1, 1, 1);
    CHECK(oracle::max_abs_diff(y->value, ref) < 1e-10);
  }
}

TEST_CASE("deeplab rejects degenerate dilation and duplicate rates") {
  ModelSpec spec = tiny_spec(ModelKind::deeplab);
  spec.dilation_rates = {1, 6, 12, 160};  // scaled rate 40 vs an 8x8 feature map
  CHECK_THROWS_AS(build_model<float>(spec, 1), std::invalid_argument);
  spec.dilation_rates = {1, 6, 6};
  CHECK_THROWS_AS(build_model<float>(spec, 1), std::invalid_argument);
}

TEST_CASE("forward is repeatable in infer mode and under a fixed dropout seed") {
  ModelSpec spec = tiny_spec(ModelKind::pix2pix_generator);
  spec.base_width = 4;
  auto m = build_model<float>(spec, 51);
  auto x = make_var(random_batch(2, 4, 64, 64, 52));

  m.training = false;
  Tape<float> t1, t2;
  auto y1 = m.forward(t1, x);
  auto y2 = m.forward(t2, x);
  CHECK(y1->value == y2->value);

  m.training = true;
  Tape<float> t3, t4, t5;
  Rng d1(99), d2(99), d3(100);
  auto z1 = m.forward(t3, x, d1);
  auto z2 = m.forward(t4, x, d2);
  CHECK(z1->value == z2->value);
  auto z3 = m.forward(t5, x, d3);
  CHECK_FALSE(z1->value == z3->value);
}

TEST_CASE("forward rejects a batch with the wrong channel count") {
  auto m = build_model<float>(tiny_spec(ModelKind::unet), 1);
  Tape<float> tape;
  auto bad = make_var(random_batch(1, 3, 64, 64, 5));
  CHECK_THROWS_AS(m.forward(tape, bad), std::invalid_argument);
}

TEST_CASE("gradient reaches every parameter of every architecture") {
  auto run = [](ModelSpec spec, uint64_t seed) {
    spec.base_width = 4;
    spec.input_size = 32;
    spec.stage_depths = {1, 1, 1, 1};
    if (spec.kind == ModelKind::pix2pix_generator) spec.generator_blocks = 5;
    auto m = build_model<float>(spec, seed);
    m.training = true;
    Tape<float> tape;
    Rng drop(7);
    auto x = make_var(random_batch(2, spec.input_channels, 32, 32, seed + 1));
    auto y = m.forward(tape, x, drop);
    Var<float> loss;
    if (spec.kind == ModelKind::patchgan_discriminator) {
      loss = bce_with_logits_mean(tape, y, 1.0f);
    } else {
      auto t = make_var(Tensor<float>::full(y->value.shape(), 0.3f));
      auto d = sub(tape, y, t);
      loss = mean_all(tape, mul(tape, d, d));
    }
    backward(tape, loss);
    for (auto& [name, p] : m.registry.params) {
      INFO(to_string(spec.kind) << " parameter " << name);
      REQUIRE(p->grad.numel() == p->value.numel());
      bool any_nonzero = false;
      for (int64_t i = 0; i < p->grad.numel(); ++i)
        if (p->grad[i] != 0.0f) any_nonzero = true;
      CHECK(any_nonzero);
    }
  };
  run(tiny_spec(ModelKind::pix2pix_generator), 61);
  run(tiny_spec(ModelKind::patchgan_discriminator), 62);
  run(tiny_spec(ModelKind::unet), 63);
  run(tiny_spec(ModelKind::deeplab), 64);
}

TEST_CASE("weights round-trip through the file format bitwise") {
  ModelSpec spec = tiny_spec(ModelKind::unet);
  spec.base_width = 4;
  spec.input_size = 32;
  spec.stage_depths = {1, 1, 1, 1};
  auto a = build_model<float>(spec, 71);

  // move the running stats off their initial values first
  a.training = true;
  Tape<float> warm;
  Rng drop(1);
  a.forward(warm, make_var(random_batch(2, 4, 32, 32, 72)), drop);
  a.training = false;

  auto x = make_var(random_batch(2, 4, 32, 32, 73));
  Tape<float> t1;
  auto y1 = a.forward(t1, x);

  const std::string path = "unet_roundtrip.weights";
  save_weights(a, path);
  auto b = build_model<float>(spec, 99);  // different init, then overwritten by load
  load_weights(b, path);
  Tape<float> t2;
  auto y2 = b.forward(t2, x);
  CHECK(y1->value == y2->value);

  // a mismatched architecture must be refused
  ModelSpec other = spec;
  other.base_width = 8;
  auto c = build_model<float>(other, 1);
  CHECK_THROWS_AS(load_weights(c, path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("model spec JSON round-trip") {
  ModelSpec spec = full_spec(ModelKind::deeplab);
  spec.dilation_rates = {1, 4, 9};
  spec.stage_depths = {2, 3, 4, 2};
  auto j = to_json(spec);
  auto back = model_spec_from_json(j);
  CHECK(back.kind == spec.kind);
  CHECK(back.input_channels == spec.input_channels);
  CHECK(back.base_width == spec.base_width);
  CHECK(back.input_size == spec.input_size);
  CHECK(back.stage_depths == spec.stage_depths);
  CHECK(back.dilation_rates == spec.dilation_rates);

  auto bad = j;
  bad["input_size"] = 100;  // not a power of two
  CHECK_THROWS_AS(model_spec_from_json(bad), std::invalid_argument);
}
