#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchseg/core/errors.hpp"
#include "branchseg/models/model.hpp"
#include "branchseg/train/adam.hpp"
#include "branchseg/train/losses.hpp"

namespace branchseg {

struct TrainConfig {
  int epochs = 140;
  int batch_size = 8;
  uint64_t seed = 0;
  LossConfig loss;
  AdamConfig adam;

  void validate() const {
    check_shape(epochs >= 1, "epochs must be >= 1");
    check_shape(batch_size >= 1, "batch_size must be >= 1");
    loss.validate();
  }
};

struct LossCurve {
  struct Row {
    int epoch;
    std::string name;
    double value;
  };
  std::vector<Row> rows;

  void add(int epoch, const std::string& name, double value) {
    if (!std::isfinite(value))
      throw DivergenceError("loss '" + name + "' diverged at epoch " + std::to_string(epoch));
    rows.push_back({epoch, name, value});
  }

  double last(const std::string& name) const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
      if (it->name == name) return it->value;
    throw std::invalid_argument("no loss named " + name + " in curve");
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "epoch,loss_name,value\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.9g", r.value);
      os << r.epoch << "," << r.name << "," << buf << "\n";
    }
  }
};

struct TrainResult {
  LossCurve curve;
  int64_t steps = 0;    // supervised optimizer steps
  int64_t d_steps = 0;  // hybrid: discriminator steps
  int64_t g_steps = 0;  // hybrid: generator steps
};

namespace detail {

template <typename T>
void validate_dataset(const std::vector<Tensor<T>>& inputs, const std::vector<Tensor<T>>& targets,
                      int channels) {
  if (inputs.empty()) throw std::invalid_argument("train: empty dataset");
  if (inputs.size() != targets.size())
    throw std::invalid_argument("train: input/target count mismatch");
  for (size_t i = 0; i < inputs.size(); ++i) {
    check_shape(inputs[i].ndim() == 3 && inputs[i].dim(0) == channels,
                "train: inputs must be [" + std::to_string(channels) + ",H,W]");
    check_shape(targets[i].ndim() == 3 && targets[i].dim(0) == 1 &&
                    targets[i].dim(1) == inputs[i].dim(1) && targets[i].dim(2) == inputs[i].dim(2),
                "train: targets must be [1,H,W] matching the input");
    check_shape(inputs[i].same_shape(inputs[0]), "train: all inputs must share one shape");
  }
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items, const std::vector<size_t>& order,
                size_t begin, size_t end) {
  const auto& first = items[order[begin]];
  Shape s = first.shape();
  s.insert(s.begin(), int(end - begin));
  Tensor<T> out(s);
  const int64_t per = first.numel();
  for (size_t b = begin; b < end; ++b)
    std::copy_n(items[order[b]].data(), per, out.data() + int64_t(b - begin) * per);
  return out;
}

/// Batch index ranges for one epoch; trailing batches of a single sample are
/// dropped because batch statistics need at least two values.
inline std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n, int batch_size) {
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t b = 0; b < n; b += size_t(batch_size)) {
    const size_t e = std::min(n, b + size_t(batch_size));
    if (e - b == 1 && batch_size > 1) continue;
    out.emplace_back(b, e);
  }
  return out;
}

}  // namespace detail

/// Standard supervised loop (wdl or l1). The model is trained in place; the
/// returned curve holds the per-epoch mean loss.
template <typename T>
TrainResult train_supervised(Model<T>& model, const std::vector<Tensor<T>>& inputs,
                             const std::vector<Tensor<T>>& targets, const TrainConfig& config) {
  config.validate();
  if (config.loss.kind == LossKind::hybrid_cgan)
    throw std::invalid_argument("hybrid loss needs the generator/discriminator pair entry point");
  detail::validate_dataset(inputs, targets, model.spec.input_channels);

  Adam<T> opt(model.registry.params, config.adam);
  const std::string loss_name = to_string(config.loss.kind);
  TrainResult result;
  model.training = true;

  std::vector<size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(config.seed, uint64_t(epoch));
    Rng dropout_rng = Rng::derive(config.seed, 0x0d0 + uint64_t(epoch));
    shuffle(order, shuffle_rng);

    double sum = 0;
    int batches = 0;
    for (auto [b, e] : detail::batch_ranges(inputs.size(), config.batch_size)) {
      Tape<T> tape;
      auto x = make_var(detail::stack(inputs, order, b, e));
      auto y = make_var(detail::stack(targets, order, b, e));
      auto pred = model.forward(tape, x, dropout_rng);
      Var<T> loss = config.loss.kind == LossKind::wdl
                        ? weighted_dice_loss(tape, pred, y, config.loss.class_weights)
                        : l1_loss(tape, pred, y);
      if (!std::isfinite(double(loss->value[0])))
        throw DivergenceError("loss '" + loss_name + "' diverged at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batches));
      opt.zero_grads();
      backward(tape, loss);
      opt.step();
      sum += double(loss->value[0]);
      ++batches;
    }
    if (batches == 0) throw std::invalid_argument("train: no batch had at least two samples");
    result.curve.add(epoch, loss_name, sum / batches);
  }
  model.training = false;
  result.steps = opt.steps();
  return result;
}

/// Adversarial loop: per batch, one discriminator step on (real, detached
/// fake), then one generator step against the updated discriminator.
template <typename T>
TrainResult train_hybrid(Model<T>& generator, Model<T>& discriminator,
                         const std::vector<Tensor<T>>& inputs,
                         const std::vector<Tensor<T>>& targets, const TrainConfig& config) {
  config.validate();
  if (config.loss.kind != LossKind::hybrid_cgan)
    throw std::invalid_argument("train_hybrid expects the hybrid_cgan loss");
  check_shape(generator.spec.kind == ModelKind::pix2pix_generator,
              "train_hybrid: first model must be the generator");
  check_shape(discriminator.spec.kind == ModelKind::patchgan_discriminator,
              "train_hybrid: second model must be the discriminator");
  check_shape(discriminator.spec.input_channels == generator.spec.input_channels + 1,
              "discriminator must take the image channels plus the mask");
  detail::validate_dataset(inputs, targets, generator.spec.input_channels);

  Adam<T> opt_g(generator.registry.params, config.adam);
  Adam<T> opt_d(discriminator.registry.params, config.adam);
  TrainResult result;
  generator.training = true;
  discriminator.training = true;

  std::vector<size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(config.seed, uint64_t(epoch));
    Rng dropout_rng = Rng::derive(config.seed, 0x0d0 + uint64_t(epoch));
    shuffle(order, shuffle_rng);

    double d_sum = 0, adv_sum = 0, l1_sum = 0, g_sum = 0;
    int batches = 0;
    for (auto [b, e] : detail::batch_ranges(inputs.size(), config.batch_size)) {
      auto xv = detail::stack(inputs, order, b, e);
      auto yv = detail::stack(targets, order, b, e);

      // generator forward on its own tape so the G step can reuse the graph
      Tape<T> tg;
      auto xg = make_var(xv);
      auto yg = make_var(yv);
      auto fake = generator.forward(tg, xg, dropout_rng);

      // discriminator step: the fake is detached so only D learns from it
      Tape<T> td;
      auto xd = make_var(xv);
      auto d_real = discriminator.forward(td, concat_channels(td, xd, make_var(yv)));
      auto d_fake = discriminator.forward(td, concat_channels(td, xd, detach(fake)));
      auto dl = discriminator_loss(td, d_real, d_fake);
      if (!std::isfinite(double(dl->value[0])))
        throw DivergenceError("discriminator loss diverged at epoch " + std::to_string(epoch));
      opt_d.zero_grads();
      backward(td, dl);
      opt_d.step();

      // generator step against the just-updated discriminator
      auto d_on_fake = discriminator.forward(tg, concat_channels(tg, xg, fake));
      auto gl = cgan_generator_objective(tg, d_on_fake, fake, yg, config.loss.lambda_l1);
      auto adv = bce_with_logits_mean(tg, d_on_fake, T(1));  // logged terms
      auto l1v = l1_loss(tg, fake, yg);
      if (!std::isfinite(double(gl->value[0])))
        throw DivergenceError("generator loss diverged at epoch " + std::to_string(epoch));
      opt_g.zero_grads();
      opt_d.zero_grads();  // the G backward also deposits into D parameters
      backward(tg, gl);
      opt_g.step();

      d_sum += double(dl->value[0]);
      adv_sum += double(adv->value[0]);
      l1_sum += double(l1v->value[0]);
      g_sum += double(gl->value[0]);
      ++batches;
    }
    if (batches == 0) throw std::invalid_argument("train: no batch had at least two samples");
    result.curve.add(epoch, "d_loss", d_sum / batches);
    result.curve.add(epoch, "g_adv", adv_sum / batches);
    result.curve.add(epoch, "g_l1", l1_sum / batches);
    result.curve.add(epoch, "g_total", g_sum / batches);
  }
  generator.training = false;
  discriminator.training = false;
  result.d_steps = opt_d.steps();
  result.g_steps = opt_g.steps();
  result.steps = result.d_steps + result.g_steps;
  return result;
}

}  // namespace branchseg
