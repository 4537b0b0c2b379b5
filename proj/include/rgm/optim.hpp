#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/tensor.hpp"

namespace rgm {

/**
 * Momentum-free adaptive-moment optimizer: per-parameter second-moment
 * scaling with bias correction (Adam with beta1 = 0).
 *
 *   v <- beta2 * v + (1 - beta2) * g^2
 *   p <- p - lr * g / (sqrt(v / (1 - beta2^t)) + eps)
 *
 * A zero gradient leaves the parameter value exactly unchanged.
 */
template <typename T>
class AdaptiveOptimizer {
 public:
  explicit AdaptiveOptimizer(T lr, T beta2 = T(0.99), T eps = T(1e-8))
      : lr_(lr), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Parameter<T>*> params) {
    t_ += 1;
    const T correction = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (Parameter<T>* p : params) {
      auto& v = second_moment_[p];
      if (v.size() != p->value.data.size()) v.assign(p->value.data.size(), T(0));
      for (size_t i = 0; i < p->value.data.size(); ++i) {
        const T g = p->grad.data[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
        if (g != T(0)) {
          const T vhat = v[i] / correction;
          p->value.data[i] -= lr_ * g / (std::sqrt(vhat) + eps_);
        }
      }
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  int64_t steps_taken() const { return t_; }

 private:
  T lr_;
  T beta2_;
  T eps_;
  int64_t t_ = 0;
  std::unordered_map<Parameter<T>*, std::vector<T>> second_moment_;
};

}  // namespace rgm
