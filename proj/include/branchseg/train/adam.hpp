#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchseg/autodiff/tape.hpp"
#include "branchseg/models/layers.hpp"

namespace branchseg {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Adam with bias correction over a fixed parameter list. Parameters with an
/// unallocated gradient are treated as zero-gradient.
template <typename T>
class Adam {
 public:
  explicit Adam(const std::vector<std::pair<std::string, Var<T>>>& params, AdamConfig cfg = {})
      : cfg_(cfg), params_(params) {
    for (auto& [name, p] : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  int64_t steps() const { return t_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      const bool has_grad = p->grad.numel() == p->value.numel();
      if (has_grad && !p->grad.all_finite())
        throw std::runtime_error("adam: non-finite gradient in " + params_[k].first);
      auto& m = m_[k];
      auto& v = v_[k];
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        const double g = has_grad ? double(p->grad[i]) : 0.0;
        m[i] = T(cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * g);
        v[i] = T(cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * g * g);
        const double mhat = double(m[i]) / bc1;
        const double vhat = double(v[i]) / bc2;
        p->value[i] -= T(cfg_.step_size * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      }
    }
  }

  void zero_grads() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

 private:
  AdamConfig cfg_;
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace branchseg
