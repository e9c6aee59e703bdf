#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "branchseg/autodiff/ops.hpp"
#include "branchseg/core/tensor.hpp"

namespace branchseg {

enum class LossKind { wdl, l1, hybrid_cgan };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::wdl: return "wdl";
    case LossKind::l1: return "l1";
    case LossKind::hybrid_cgan: return "hybrid_cgan";
  }
  throw std::invalid_argument("unknown loss kind");
}

inline LossKind loss_kind_from(const std::string& s) {
  if (s == "wdl") return LossKind::wdl;
  if (s == "l1") return LossKind::l1;
  if (s == "hybrid_cgan") return LossKind::hybrid_cgan;
  throw std::invalid_argument("unknown loss kind: " + s);
}

struct ClassWeights {
  double branch = 1.0;
  double non_branch = 1.0;
};

struct LossConfig {
  LossKind kind = LossKind::wdl;
  double lambda_l1 = 100.0;
  ClassWeights class_weights;

  void validate() const {
    check_shape(lambda_l1 > 0, "lambda_l1 must be positive");
    check_shape(class_weights.branch > 0 && class_weights.non_branch > 0,
                "class weights must be positive");
  }
};

/// Soft dice over the two classes (branch, non-branch), complement-encoded,
/// with smoothing epsilon 1. Zero iff prediction equals the hard target.
template <typename T>
Var<T> weighted_dice_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target,
                          const ClassWeights& w = {}) {
  if (!pred->value.same_shape(target->value))
    throw std::invalid_argument("weighted_dice_loss: shape mismatch " +
                                shape_str(pred->value.shape()) + " vs " +
                                shape_str(target->value.shape()));
  check_shape(w.branch > 0 && w.non_branch > 0, "class weights must be positive");
  for (int64_t i = 0; i < pred->value.numel(); ++i) {
    if (pred->value[i] < T(0) || pred->value[i] > T(1))
      throw std::invalid_argument("weighted_dice_loss: pred outside [0,1]");
    if (target->value[i] != T(0) && target->value[i] != T(1))
      throw std::invalid_argument("weighted_dice_loss: target must be binary");
  }
  const T eps = T(1);

  auto pred_nb = affine(tape, pred, T(-1), T(1));
  auto target_nb = affine(tape, target, T(-1), T(1));
  auto inter_b = sum_all(tape, mul(tape, pred, target));
  auto inter_nb = sum_all(tape, mul(tape, pred_nb, target_nb));
  auto total_b = sum_all(tape, add(tape, pred, target));
  auto total_nb = sum_all(tape, add(tape, pred_nb, target_nb));

  auto num = add(tape, affine(tape, inter_b, T(2 * w.branch), T(0)),
                 affine(tape, inter_nb, T(2 * w.non_branch), eps));
  auto den = add(tape, affine(tape, total_b, T(w.branch), T(0)),
                 affine(tape, total_nb, T(w.non_branch), eps));
  return affine(tape, scalar_div(tape, num, den), T(-1), T(1));
}

/// Mean absolute error.
template <typename T>
Var<T> l1_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target) {
  if (!pred->value.same_shape(target->value))
    throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(pred->value.shape()) +
                                " vs " + shape_str(target->value.shape()));
  return mean_all(tape, abs_op(tape, sub(tape, pred, target)));
}

/// Generator objective: fool the discriminator (BCE of its patch logits
/// against all-ones) plus lambda times the L1 distance to the ground truth.
template <typename T>
Var<T> cgan_generator_objective(Tape<T>& tape, const Var<T>& disc_logits_on_fake,
                                const Var<T>& pred, const Var<T>& target, double lambda_l1) {
  check_shape(lambda_l1 >= 0, "lambda_l1 must be non-negative");
  auto adversarial = bce_with_logits_mean(tape, disc_logits_on_fake, T(1));
  auto l1 = l1_loss(tape, pred, target);
  return add(tape, adversarial, affine(tape, l1, T(lambda_l1), T(0)));
}

/// Mean of the real-vs-1 and fake-vs-0 cross entropies, halved.
template <typename T>
Var<T> discriminator_loss(Tape<T>& tape, const Var<T>& logits_on_real,
                          const Var<T>& logits_on_fake) {
  auto real_term = bce_with_logits_mean(tape, logits_on_real, T(1));
  auto fake_term = bce_with_logits_mean(tape, logits_on_fake, T(0));
  return affine(tape, add(tape, real_term, fake_term), T(0.5), T(0));
}

/// Weights inverse to class pixel frequency over the whole dataset,
/// normalized so they sum to 2 (a balanced dataset gives (1,1)).
inline ClassWeights compute_class_weights(const std::vector<Mask>& masks) {
  if (masks.empty()) throw std::invalid_argument("compute_class_weights: empty dataset");
  int64_t branch = 0, total = 0;
  for (const auto& m : masks) {
    branch += mask_count(m);
    total += m.numel();
  }
  if (branch == 0) throw std::invalid_argument("compute_class_weights: no branch pixels");
  if (branch == total) throw std::invalid_argument("compute_class_weights: no background pixels");
  const double f = double(branch) / double(total);
  return {2.0 * (1.0 - f), 2.0 * f};
}

}  // namespace branchseg
