#pragma once

#include <stdexcept>
#include <variant>

#include "branchseg/core/errors.hpp"
#include "branchseg/models/deeplab.hpp"
#include "branchseg/models/pix2pix.hpp"
#include "branchseg/models/spec.hpp"
#include "branchseg/models/unet.hpp"

namespace branchseg {

/// A built network: spec, the parameter/buffer registry, and the graph
/// builder for one of the four architectures. Parameter shapes and names are
/// a pure function of the spec; values are a pure function of (spec, seed).
template <typename T>
struct Model {
  ModelSpec spec;
  Registry<T> registry;
  bool training = false;
  std::variant<Pix2PixGenerator<T>, PatchGAN<T>, UNet<T>, DeepLab<T>> net;

  Var<T> forward(Tape<T>& tape, const Var<T>& batch, Rng& dropout_rng) {
    if (batch->value.ndim() != 4 || batch->value.dim(1) != spec.input_channels)
      throw std::invalid_argument("forward: batch must be [N," +
                                  std::to_string(spec.input_channels) + ",H,W], got " +
                                  shape_str(batch->value.shape()));
    Var<T> out;
    if (auto* g = std::get_if<Pix2PixGenerator<T>>(&net))
      out = g->forward(tape, batch, training, dropout_rng);
    else if (auto* d = std::get_if<PatchGAN<T>>(&net))
      out = d->forward(tape, batch, training);
    else if (auto* u = std::get_if<UNet<T>>(&net))
      out = u->forward(tape, batch, training);
    else
      out = std::get<DeepLab<T>>(net).forward(tape, batch, training);
    if (!out->value.all_finite()) throw DivergenceError("forward produced non-finite values");
    return out;
  }

  /// Infer-mode convenience without a dropout stream.
  Var<T> forward(Tape<T>& tape, const Var<T>& batch) {
    Rng unused(0);
    return forward(tape, batch, unused);
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (auto& [name, v] : registry.params) n += v->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, v] : registry.params) v->zero_grad();
  }
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Model<T> m;
  m.spec = spec;
  Rng rng = Rng::derive(seed, 0xb5eed);
  switch (spec.kind) {
    case ModelKind::pix2pix_generator:
      m.net = Pix2PixGenerator<T>(m.registry, spec, rng);
      break;
    case ModelKind::patchgan_discriminator:
      m.net = PatchGAN<T>(m.registry, spec, rng);
      break;
    case ModelKind::unet:
      m.net = UNet<T>(m.registry, spec, rng);
      break;
    case ModelKind::deeplab:
      m.net = DeepLab<T>(m.registry, spec, rng);
      break;
  }
  return m;
}

}  // namespace branchseg
