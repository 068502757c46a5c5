#pragma once

#include <span>
#include <vector>

#include "widenet/core/parameter.hpp"

namespace widenet {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamOptions&) const = default;
};

/// Adam with bias correction over a fixed, ordered list of parameters.
class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, AdamOptions opts = {}) : params_(trainable_only(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  long step_count() const { return t_; }
  const ParamList& params() const { return params_; }

  void zero_grad() { zero_grads(params_); }

  /// Applies one update from the accumulated gradients. A non-finite
  /// gradient rejects the whole step and leaves parameters and moments intact.
  void step() {
    for (auto* p : params_) {
      if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
        throw ShapeError("adam: gradient shape of '" + p->name + "' differs from its value");
      if (!all_finite(p->grad)) throw NumericError("adam: non-finite gradient in '" + p->name + "', update rejected");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p->grad;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p->grad.cwiseAbs2();
      p->value.array() -= opts_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opts_.eps);
    }
  }

  // Moment access for checkpointing.
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_step_count(long t) { t_ = t; }

 private:
  ParamList params_;
  AdamOptions opts_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

/// θ' ← τθ + (1−τ)θ' over matching parameter lists (all state, including
/// running statistics).
inline void polyak_update(std::span<Parameter* const> target, std::span<Parameter* const> online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("polyak tau must lie in [0,1], got " + std::to_string(tau));
  if (target.size() != online.size())
    throw ShapeError("polyak_update: " + std::to_string(target.size()) + " target vs " + std::to_string(online.size()) +
                     " online parameters");
  for (std::size_t i = 0; i < target.size(); ++i)
    require_same_shape(target[i]->value, online[i]->value, "polyak_update");
  if (tau == 0.0) return;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (tau == 1.0)
      target[i]->value = online[i]->value;
    else
      target[i]->value = tau * online[i]->value + (1.0 - tau) * target[i]->value;
  }
}

}  // namespace widenet
