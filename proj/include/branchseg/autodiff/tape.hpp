#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "branchseg/core/tensor.hpp"

namespace branchseg {

/// A tensor participating in reverse-mode differentiation. Gradients are
/// allocated lazily and accumulate across uses of the same node.
template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first touched
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
  }
  void zero_grad() {
    if (grad.numel()) grad.fill(T(0));
  }
};

template <typename T>
using Var = std::shared_ptr<VarNode<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
  auto node = std::make_shared<VarNode<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
Var<T> make_scalar(T value, bool requires_grad = false) {
  Tensor<T> t(Shape{1});
  t[0] = value;
  return make_var(std::move(t), requires_grad);
}

/// Ordered record of executed differentiable ops. backward() replays the
/// record in exact reverse execution order; each step adds into the input
/// gradients of its op.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }
  void clear() { steps_.clear(); }

  void replay_backward() const {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape backward. The loss must be
/// scalar and the tape nonempty.
template <typename T>
void backward(Tape<T>& tape, const Var<T>& loss) {
  if (!loss || loss->value.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  if (tape.empty()) throw std::invalid_argument("backward: empty tape");
  loss->ensure_grad();
  loss->grad[0] += T(1);
  tape.replay_backward();
}

}  // namespace branchseg
