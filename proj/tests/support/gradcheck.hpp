#pragma once

// Central finite-difference oracle used by the gradient tests. It only
// needs a way to rebuild the scalar loss on a fresh tape; it never looks at
// the recorded backward closures.

#include <algorithm>
#include <cstring>
#include <functional>
#include <vector>

#include "widenet/core/tape.hpp"

namespace widenet::oracle {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // stencils that straddled a ReLU kink
};

/// Relative error with a floored denominator. Central differences carry
/// roundoff of order eps·|L|/h (~1e-9 here), so components that are exactly
/// zero analytically (a bias feeding batch normalisation) are judged on an
/// absolute scale of floor·tolerance instead.
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {
inline std::vector<char> relu_pattern(const Tape& t) {
  std::vector<char> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    Var v{i};
    if (std::strcmp(t.tag(v), "relu") != 0 && std::strcmp(t.tag(v), "clamp") != 0) continue;
    const Matrix& m = t.value(v);
    for (Index k = 0; k < m.size(); ++k) out.push_back(m.data()[k] > 0.0 ? 1 : 0);
  }
  return out;
}
}  // namespace detail

/// Compares analytic gradients of `build` w.r.t. every trainable element of
/// `params` with (L(θ+h) − L(θ−h)) / 2h.
inline GradCheckResult gradcheck(const ParamList& params, const std::function<Var(Tape&)>& build, double h = 1e-5,
                                 double floor = 1e-2) {
  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    Var loss = build(t);
    t.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto eval = [&](std::vector<char>* pattern) {
    Tape t(false);
    Var loss = build(t);
    if (pattern) *pattern = detail::relu_pattern(t);
    return t.scalar(loss);
  };

  GradCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    if (!p->trainable()) continue;
    for (Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double orig = w;
      std::vector<char> pat_plus, pat_minus;
      w = orig + h;
      const double lp = eval(&pat_plus);
      w = orig - h;
      const double lm = eval(&pat_minus);
      w = orig;
      if (pat_plus != pat_minus) {
        ++r.skipped_kinks;
        continue;
      }
      const double num = (lp - lm) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[k].data()[i], num, floor));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace widenet::oracle
