#pragma once

#include <cmath>
#include <numbers>

#include "sfsci/autodiff.hpp"

namespace sfsci {

enum class LrSchedule { constant, cosine_annealing };

/// Learning rate at `step` of `total_steps` (cosine anneals to zero).
inline double scheduled_lr(double lr_init, LrSchedule schedule, std::size_t step, std::size_t total_steps) {
  if (schedule == LrSchedule::constant || total_steps == 0) return lr_init;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * lr_init * (1.0 + std::cos(std::numbers::pi * t));
}

/// Adam over a fixed list of parameters. Frozen parameters are skipped.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value().shape());
      v_.emplace_back(p->value().shape());
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t steps() const { return t_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// Applies one update using the accumulated gradients scaled by `grad_scale`.
  void step(T grad_scale = T(1)) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>* p = params_[i];
      if (p->frozen() || p->grad().empty()) continue;
      const Tensor<T>& g = p->grad();
      Tensor<T>& w = p->mutable_value();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]) * static_cast<double>(grad_scale);
        const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
        const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] = static_cast<T>(w[j] - lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace sfsci
