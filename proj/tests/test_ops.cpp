#include <catch2/catch_amalgamated.hpp>

#include "branchseg/autodiff/ops.hpp"
#include "branchseg/core/rng.hpp"
#include "oracles.hpp"

using namespace branchseg;

namespace {

template <typename T>
Var<T> leaf(Tensor<T> t, bool grad = false) {
  return make_var(std::move(t), grad);
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  oracle::fill_uniform(t, rng, lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tape<double> tape;
  Rng rng(7);
  auto x = leaf(random_tensor<double>({1, 1, 3, 3}, rng));
  auto k = leaf(Tensor<double>::ones({1, 1, 1, 1}));
  auto y = conv2d(tape, x, k, Var<double>{}, 1, 1, 0);
  REQUIRE(y->value.shape() == Shape{1, 1, 3, 3});
  CHECK(oracle::max_abs_diff(y->value, x->value) == 0.0);
}

TEST_CASE("conv2d dilated ones against direct summation") {
  Tape<double> tape;
  auto x = leaf(Tensor<double>::ones({1, 1, 5, 5}));
  auto k = leaf(Tensor<double>::ones({1, 1, 3, 3}));
  auto y = conv2d(tape, x, k, Var<double>{}, 1, 2, 2);
  REQUIRE(y->value.shape() == Shape{1, 1, 5, 5});
  CHECK(y->value.at(0, 0, 2, 2) == Catch::Approx(9.0));
  auto ref = oracle::conv2d_ref<double>(x->value, k->value, nullptr, 1, 2, 2);
  CHECK(oracle::max_abs_diff(y->value, ref) < 1e-12);
}

TEST_CASE("conv2d random cases equal the direct-summation oracle") {
  Rng rng(11);
  for (int it = 0; it < 30; ++it) {
    int Ci = rng.uniform_int(1, 3), Co = rng.uniform_int(1, 3);
    int H = rng.uniform_int(5, 9), W = rng.uniform_int(5, 9);
    int k = rng.uniform_int(1, 3);
    int stride = rng.uniform_int(1, 2);
    int dil = rng.uniform_int(1, 2);
    int pad = rng.uniform_int(0, 2);
    if (H + 2 * pad < dil * (k - 1) + 1 || W + 2 * pad < dil * (k - 1) + 1) continue;
    Tape<double> tape;
    auto x = leaf(random_tensor<double>({2, Ci, H, W}, rng));
    auto kk = leaf(random_tensor<double>({Co, Ci, k, k}, rng));
    auto bias = leaf(random_tensor<double>({Co}, rng));
    auto y = conv2d(tape, x, kk, bias, stride, dil, pad);
    auto ref = oracle::conv2d_ref(x->value, kk->value, &bias->value.vec(), stride, dil, pad);
    REQUIRE(y->value.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y->value, ref) < 1e-10);
  }
}

TEST_CASE("conv2d dilation equals standard conv on the zero-inserted kernel") {
  Rng rng(13);
  for (int it = 0; it < 20; ++it) {
    int rate = rng.uniform_int(2, 3);
    Tape<double> tape;
    auto x = leaf(random_tensor<double>({1, 2, 9, 9}, rng));
    auto k = leaf(random_tensor<double>({2, 2, 3, 3}, rng));
    auto dilated = conv2d(tape, x, k, Var<double>{}, 1, rate, rate);
    auto expanded = leaf(oracle::zero_insert_kernel(k->value, rate));
    auto plain = conv2d(tape, x, expanded, Var<double>{}, 1, 1, rate);
    REQUIRE(dilated->value.shape() == plain->value.shape());
    CHECK(oracle::max_abs_diff(dilated->value, plain->value) < 1e-6);
  }
}

TEST_CASE("conv2d rejects channel mismatch and oversized dilation") {
  Tape<float> tape;
  auto x = leaf(Tensor<float>::ones({1, 2, 4, 4}));
  auto k = leaf(Tensor<float>::ones({1, 3, 3, 3}));
  CHECK_THROWS_AS(conv2d(tape, x, k, Var<float>{}, 1, 1, 1), std::invalid_argument);
  auto k2 = leaf(Tensor<float>::ones({1, 2, 3, 3}));
  CHECK_THROWS_AS(conv2d(tape, x, k2, Var<float>{}, 1, 4, 0), std::invalid_argument);
}

TEST_CASE("transpose_conv2d single-tap expansion") {
  Tape<double> tape;
  Tensor<double> x({1, 1, 1, 1});
  x[0] = 2.5;
  Rng rng(3);
  auto k = leaf(random_tensor<double>({1, 1, 2, 2}, rng));
  auto y = transpose_conv2d(tape, leaf(std::move(x)), k, Var<double>{}, 2, 0);
  REQUIRE(y->value.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(y->value[i] == Catch::Approx(2.5 * k->value[i]));
}

TEST_CASE("transpose_conv2d equals the scatter-add oracle") {
  Tape<double> tape;
  auto x = leaf(Tensor<double>::ones({1, 1, 2, 2}));
  auto k = leaf(Tensor<double>::ones({1, 1, 3, 3}));
  auto y = transpose_conv2d(tape, x, k, Var<double>{}, 2, 0);
  auto ref = oracle::transpose_conv2d_ref(x->value, k->value, 2, 0);
  REQUIRE(y->value.shape() == ref.shape());
  CHECK(oracle::max_abs_diff(y->value, ref) < 1e-12);

  Rng rng(17);
  for (int it = 0; it < 20; ++it) {
    int Ci = rng.uniform_int(1, 3), Co = rng.uniform_int(1, 3);
    int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
    int kk = rng.uniform_int(2, 4);
    if ((3 - 1) * stride - 2 * pad + kk < 1) continue;
    Tape<double> t2;
    auto xi = leaf(random_tensor<double>({2, Ci, 3, 4}, rng));
    auto ki = leaf(random_tensor<double>({Ci, Co, kk, kk}, rng));
    auto yo = transpose_conv2d(t2, xi, ki, Var<double>{}, stride, pad);
    auto r2 = oracle::transpose_conv2d_ref(xi->value, ki->value, stride, pad);
    REQUIRE(yo->value.shape() == r2.shape());
    CHECK(oracle::max_abs_diff(yo->value, r2) < 1e-10);
  }
}

TEST_CASE("transpose_conv2d satisfies the adjoint identity") {
  Rng rng(23);
  // spec example: 1x2x4x4 input with matching y
  for (int it = 0; it < 100; ++it) {
    int Ci = rng.uniform_int(1, 3), Co = rng.uniform_int(1, 3);
    int H = rng.uniform_int(4, 7), W = rng.uniform_int(4, 7);
    int k = rng.uniform_int(1, 3), stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
    if (H + 2 * pad < k || W + 2 * pad < k) continue;
    // choose extents with an exact stride fit so the adjoint maps back to H,W
    int Ho = (H + 2 * pad - k) / stride + 1;
    int Wo = (W + 2 * pad - k) / stride + 1;
    H = (Ho - 1) * stride - 2 * pad + k;
    W = (Wo - 1) * stride - 2 * pad + k;
    if (H < 1 || W < 1) continue;
    Tape<double> tape;
    auto x = leaf(random_tensor<double>({1, Ci, H, W}, rng));
    auto kernel = leaf(random_tensor<double>({Co, Ci, k, k}, rng));
    auto cx = conv2d(tape, x, kernel, Var<double>{}, stride, 1, pad);
    auto y = leaf(random_tensor<double>(cx->value.shape(), rng));
    auto cty = transpose_conv2d(tape, y, kernel, Var<double>{}, stride, pad);
    REQUIRE(cty->value.shape() == x->value.shape());
    double lhs = oracle::dot(cx->value, y->value);
    double rhs = oracle::dot(x->value, cty->value);
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-5));
  }
}

TEST_CASE("batchnorm2d normalizes a two-point channel") {
  Tape<double> tape;
  Tensor<double> x({2, 1, 1, 1});
  x[0] = -1.0;
  x[1] = 1.0;
  auto gamma = leaf(Tensor<double>::ones({1}));
  auto beta = leaf(Tensor<double>::zeros({1}));
  Tensor<double> rm({1}), rv = Tensor<double>::ones({1});
  auto y = batchnorm2d(tape, leaf(std::move(x)), gamma, beta, rm, rv, true);
  CHECK(y->value[0] == Catch::Approx(-1.0).margin(1e-4));
  CHECK(y->value[1] == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("batchnorm2d constant input maps to zero under the epsilon floor") {
  Tape<double> tape;
  auto x = leaf(Tensor<double>::full({2, 3, 2, 2}, 4.2));
  auto gamma = leaf(Tensor<double>::ones({3}));
  auto beta = leaf(Tensor<double>::zeros({3}));
  Tensor<double> rm({3}), rv = Tensor<double>::ones({3});
  auto y = batchnorm2d(tape, x, gamma, beta, rm, rv, true);
  for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(std::abs(y->value[i]) < 1e-9);
}

TEST_CASE("batchnorm2d infer mode reproduces the scalar formula") {
  Tape<double> tape;
  Rng rng(31);
  auto x = leaf(random_tensor<double>({2, 2, 3, 3}, rng));
  Tensor<double> gamma({2}), beta({2}), rm({2}), rv({2});
  gamma[0] = 1.3;
  gamma[1] = 0.7;
  beta[0] = -0.2;
  beta[1] = 0.5;
  rm[0] = 0.1;
  rm[1] = -0.4;
  rv[0] = 2.0;
  rv[1] = 0.5;
  auto y = batchnorm2d(tape, x, leaf(gamma), leaf(beta), rm, rv, false);
  const double eps = 1e-5;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double expect =
              (x->value.at(n, c, i, j) - rm[c]) / std::sqrt(rv[c] + eps) * gamma[c] + beta[c];
          CHECK(y->value.at(n, c, i, j) == Catch::Approx(expect).margin(1e-6));
        }
}

TEST_CASE("batchnorm2d updates running stats by moving average") {
  Tape<double> tape;
  auto x = leaf(Tensor<double>::full({1, 1, 2, 2}, 3.0));
  auto gamma = leaf(Tensor<double>::ones({1}));
  auto beta = leaf(Tensor<double>::zeros({1}));
  Tensor<double> rm({1}), rv = Tensor<double>::ones({1});
  batchnorm2d(tape, x, gamma, beta, rm, rv, true);
  CHECK(rm[0] == Catch::Approx(0.9 * 0.0 + 0.1 * 3.0));
  CHECK(rv[0] == Catch::Approx(0.9 * 1.0 + 0.1 * 0.0));
}

TEST_CASE("batchnorm2d train mode rejects single-element channel planes") {
  Tape<double> tape;
  auto x = leaf(Tensor<double>::ones({1, 2, 1, 1}));
  auto gamma = leaf(Tensor<double>::ones({2}));
  auto beta = leaf(Tensor<double>::zeros({2}));
  Tensor<double> rm({2}), rv = Tensor<double>::ones({2});
  CHECK_THROWS_AS(batchnorm2d(tape, x, gamma, beta, rm, rv, true), std::invalid_argument);
}

TEST_CASE("activation point values") {
  Tape<double> tape;
  Tensor<double> x({5});
  x[0] = -3;
  x[1] = 2;
  x[2] = -1;
  x[3] = 0;
  x[4] = 1000;
  auto xr = leaf(x);
  CHECK(relu(tape, xr)->value[0] == 0.0);
  CHECK(relu(tape, xr)->value[1] == 2.0);
  CHECK(leaky_relu(tape, xr)->value[2] == Catch::Approx(-0.2));
  CHECK(sigmoid(tape, xr)->value[3] == Catch::Approx(0.5));
  auto s = sigmoid(tape, xr);
  for (int i = 0; i < 5; ++i) {
    CHECK(s->value[i] > 0.0);
    CHECK(s->value[i] <= 1.0);
  }
}

TEST_CASE("forward ops stay finite for inputs within +-1e3") {
  Rng rng(41);
  Tape<double> tape;
  auto x = leaf(random_tensor<double>({2, 3, 6, 6}, rng, -1e3, 1e3), true);
  auto k = leaf(random_tensor<double>({4, 3, 3, 3}, rng, -1e3, 1e3), true);
  CHECK(conv2d(tape, x, k, Var<double>{}, 1, 1, 1)->value.all_finite());
  CHECK(relu(tape, x)->value.all_finite());
  CHECK(leaky_relu(tape, x)->value.all_finite());
  CHECK(sigmoid(tape, x)->value.all_finite());
  CHECK(bilinear_upsample(tape, x, 9, 5)->value.all_finite());
  auto gamma = leaf(Tensor<double>::ones({3}));
  auto beta = leaf(Tensor<double>::zeros({3}));
  Tensor<double> rm({3}), rv = Tensor<double>::ones({3});
  CHECK(batchnorm2d(tape, x, gamma, beta, rm, rv, true)->value.all_finite());
  CHECK(mean_spatial(tape, x)->value.all_finite());
  CHECK(bce_with_logits_mean(tape, x, 1.0)->value.all_finite());
}

TEST_CASE("dropout identity cases") {
  Tape<double> tape;
  Rng rng(5);
  auto x = leaf(random_tensor<double>({1, 2, 4, 4}, rng));
  auto a = dropout(tape, x, 0.0, true, rng);
  CHECK(oracle::max_abs_diff(a->value, x->value) == 0.0);
  auto b = dropout(tape, x, 0.5, false, rng);
  CHECK(oracle::max_abs_diff(b->value, x->value) == 0.0);
  CHECK_THROWS_AS(dropout(tape, x, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout(tape, x, -0.1, true, rng), std::invalid_argument);
}

TEST_CASE("dropout preserves the mean within 1 percent at p=0.5") {
  Tape<float> tape;
  Rng rng(77);
  auto x = leaf(Tensor<float>::ones({100000}));
  auto y = dropout(tape, x, 0.5, true, rng);
  double mean = 0;
  for (int64_t i = 0; i < y->value.numel(); ++i) mean += y->value[i];
  mean /= double(y->value.numel());
  CHECK(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("bilinear_upsample basics") {
  Tape<double> tape;
  auto c = leaf(Tensor<double>::full({1, 2, 3, 3}, 0.7));
  auto up = bilinear_upsample(tape, c, 7, 5);
  for (int64_t i = 0; i < up->value.numel(); ++i) CHECK(up->value[i] == Catch::Approx(0.7));

  Tensor<double> q({1, 1, 2, 2});
  q[0] = 0;
  q[1] = 1;
  q[2] = 2;
  q[3] = 3;
  auto ql = leaf(q);
  auto y = bilinear_upsample(tape, ql, 4, 4);
  auto ref = oracle::bilinear_ref(ql->value, 4, 4);
  CHECK(oracle::max_abs_diff(y->value, ref) < 1e-12);

  Rng rng(9);
  auto r = leaf(random_tensor<double>({2, 3, 5, 4}, rng));
  auto same = bilinear_upsample(tape, r, 5, 4);
  CHECK(oracle::max_abs_diff(same->value, r->value) == 0.0);
}

TEST_CASE("bilinear_upsample random sizes match the weight oracle") {
  Rng rng(91);
  for (int it = 0; it < 20; ++it) {
    Tape<double> tape;
    int H = rng.uniform_int(1, 6), W = rng.uniform_int(1, 6);
    int oh = rng.uniform_int(1, 9), ow = rng.uniform_int(1, 9);
    auto x = leaf(random_tensor<double>({1, 2, H, W}, rng));
    auto y = bilinear_upsample(tape, x, oh, ow);
    auto ref = oracle::bilinear_ref(x->value, oh, ow);
    CHECK(oracle::max_abs_diff(y->value, ref) < 1e-12);
  }
}

TEST_CASE("concat_channels layout and errors") {
  Tape<double> tape;
  Rng rng(27);
  auto a = leaf(random_tensor<double>({1, 3, 8, 8}, rng));
  auto b = leaf(random_tensor<double>({1, 5, 8, 8}, rng));
  auto y = concat_channels(tape, a, b);
  REQUIRE(y->value.shape() == Shape{1, 8, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i) CHECK(y->value[c * 64 + i] == a->value[c * 64 + i]);
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 64; ++i) CHECK(y->value[(3 + c) * 64 + i] == b->value[c * 64 + i]);

  auto z = leaf(Tensor<double>::zeros({1, 2, 8, 8}));
  auto with_zeros = concat_channels(tape, a, z);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i) CHECK(with_zeros->value[c * 64 + i] == a->value[c * 64 + i]);

  auto bad = leaf(Tensor<double>::zeros({1, 2, 4, 8}));
  CHECK_THROWS_AS(concat_channels(tape, a, bad), std::invalid_argument);
}
