#pragma once

#include <Eigen/SVD>
#include <fstream>
#include <spdlog/spdlog.h>
#include <string>
#include <vector>

#include "widenet/agents.hpp"
#include "widenet/architectures.hpp"

namespace widenet {

/// Singular values of Φ in descending order. The decomposition runs on the
/// smaller Gram side (Φᵀ when n_samples > feature_dim); the spectrum is the same.
inline Eigen::VectorXd singular_values(const Matrix& phi) {
  using Col = Eigen::MatrixXd;
  Col m = phi.rows() > phi.cols() ? Col(phi.transpose()) : Col(phi);
  Eigen::BDCSVD<Col> svd(m);
  Eigen::VectorXd s = svd.singularValues();
  std::sort(s.data(), s.data() + s.size(), std::greater<>());
  return s;
}

/// srank_δ(Φ) = min{k : Σ_{i≤k} σ_i ≥ (1 − δ)·Σ_i σ_i}.
/// The comparison allows a relative slack of 1e-12 of the total so that
/// spectra which meet the bound exactly (e.g. equal singular values) are not
/// lost to SVD roundoff.
inline int effective_rank_from_spectrum(const Eigen::VectorXd& sigma, double delta) {
  if (!(delta > 0 && delta < 1)) throw InvalidArgument("effective_rank: delta must lie in (0,1)");
  const double total = sigma.sum();
  if (total <= 0) return 0;
  const double bound = (1.0 - delta) * total - 1e-12 * total;
  double acc = 0.0;
  for (Index k = 0; k < sigma.size(); ++k) {
    acc += sigma[k];
    if (acc >= bound) return static_cast<int>(k + 1);
  }
  return static_cast<int>(sigma.size());
}

inline int effective_rank(const Matrix& phi, double delta = 0.01) {
  if (!(delta > 0 && delta < 1)) throw InvalidArgument("effective_rank: delta must lie in (0,1)");
  if (phi.size() == 0) throw ShapeError("effective_rank: empty feature matrix");
  if (!all_finite(phi)) throw NumericError("effective_rank: feature matrix has non-finite entries");
  if (phi.cwiseAbs().maxCoeff() == 0.0) {
    spdlog::warn("effective_rank: all-zero feature matrix, rank defined as 0");
    return 0;
  }
  if (phi.rows() < phi.cols())
    spdlog::warn("effective_rank: {} samples for {} features; the rank is capped by the sample count", phi.rows(),
                 phi.cols());
  return effective_rank_from_spectrum(singular_values(phi), delta);
}

/// Penultimate-layer critic activations (block output, before the head), eval mode.
inline Matrix collect_features(Network& critic, const Matrix& z_sa) {
  if (z_sa.rows() < 1) throw ShapeError("collect_features: empty batch");
  Tape t(false);
  return t.value(critic.features(t, t.constant(z_sa), Mode::eval));
}

inline Matrix collect_features(Agent& agent, OfeNet& ofe, const Matrix& s, const Matrix& a, int critic = 0) {
  return collect_features(agent.critic(critic), ofe.encode_state_action(s, a));
}

// -- loss surfaces --

using Direction = std::vector<Matrix>;

/// Rescales every output-neuron slice (column j of an in × out weight) of
/// `dir` to the norm of the matching slice of θ. Bias, BN and other non-weight
/// entries are zeroed. A zero direction slice facing a nonzero θ slice is
/// redrawn from `rng`; a zero θ slice zeroes the direction slice.
inline Direction filter_normalize(Direction dir, const ParamList& theta, Rng& rng) {
  if (dir.size() != theta.size()) throw ShapeError("filter_normalize: direction and parameters differ in length");
  for (std::size_t k = 0; k < dir.size(); ++k) {
    const Parameter& p = *theta[k];
    Matrix& d = dir[k];
    require_same_shape(d, p.value, "filter_normalize " + p.name);
    if (p.role != ParamRole::weight && p.role != ParamRole::projection) {
      d.setZero();
      continue;
    }
    for (Index j = 0; j < d.cols(); ++j) {
      const double target = p.value.col(j).norm();
      if (target == 0.0) {
        d.col(j).setZero();
        continue;
      }
      double n = d.col(j).norm();
      for (int tries = 0; n == 0.0; ++tries) {
        if (tries > 100) throw NumericError("filter_normalize: could not draw a nonzero slice");
        d.col(j) = gaussian(d.rows(), 1, rng);
        n = d.col(j).norm();
      }
      d.col(j) *= target / n;
    }
  }
  return dir;
}

inline Direction random_direction(const ParamList& theta, Rng& rng) {
  Direction d;
  for (auto* p : theta) d.push_back(gaussian(p->value.rows(), p->value.cols(), rng));
  return filter_normalize(std::move(d), theta, rng);
}

/// J_Q = mean_i ½(Q(z_sa,i) − Q̂_i)², eval mode.
inline double j_q(Network& critic, const Matrix& z_sa, const Matrix& q_hat) {
  if (z_sa.rows() < 1) throw ShapeError("J_Q: empty dataset");
  if (q_hat.rows() != z_sa.rows() || q_hat.cols() != 1) throw ShapeError("J_Q: targets must be n x 1");
  Matrix q = critic.forward(z_sa, Mode::eval);
  return 0.5 * (q - q_hat).array().square().mean();
}

struct SurfaceOptions {
  int resolution = 25;
  double lo = -1.0;
  double hi = 1.0;
  std::uint64_t seed = 0;
};

struct SurfaceGrid {
  std::vector<double> a, b;  // coefficient axes
  Matrix loss;               // loss(i, j) at θ + a_i·d1 + b_j·d2; NaN marks a non-finite cell
  Direction d1, d2;
  double center = 0.0;       // J_Q at the unperturbed θ
  int nonfinite_cells = 0;
};

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return v;
}

/// Scans J_Q over a 2-D slice of parameter space spanned by two independent
/// filter-normalised random directions (not orthogonalised). Targets are
/// frozen; θ is restored afterwards.
inline SurfaceGrid loss_surface(Network& critic, const Matrix& z_sa, const Matrix& q_hat, const SurfaceOptions& opt,
                                const std::vector<double>* a_axis = nullptr, const std::vector<double>* b_axis = nullptr,
                                const Direction* d1 = nullptr, const Direction* d2 = nullptr) {
  if (opt.resolution < 1) throw ConfigError("surface resolution must be >= 1");
  ParamList theta = critic.parameters();
  Rng rng(opt.seed);
  SurfaceGrid g;
  g.d1 = d1 ? *d1 : random_direction(theta, rng);
  g.d2 = d2 ? *d2 : random_direction(theta, rng);
  g.a = a_axis ? *a_axis : linspace(opt.lo, opt.hi, opt.resolution);
  g.b = b_axis ? *b_axis : linspace(opt.lo, opt.hi, opt.resolution);
  g.center = j_q(critic, z_sa, q_hat);

  std::vector<Matrix> base;
  for (auto* p : theta) base.push_back(p->value);
  g.loss.resize(static_cast<Index>(g.a.size()), static_cast<Index>(g.b.size()));
  for (std::size_t i = 0; i < g.a.size(); ++i)
    for (std::size_t j = 0; j < g.b.size(); ++j) {
      for (std::size_t k = 0; k < theta.size(); ++k) theta[k]->value = base[k] + g.a[i] * g.d1[k] + g.b[j] * g.d2[k];
      double v = j_q(critic, z_sa, q_hat);
      if (!std::isfinite(v)) {
        v = std::numeric_limits<double>::quiet_NaN();
        ++g.nonfinite_cells;
      }
      g.loss(static_cast<Index>(i), static_cast<Index>(j)) = v;
    }
  for (std::size_t k = 0; k < theta.size(); ++k) theta[k]->value = base[k];
  if (g.nonfinite_cells > 0) spdlog::warn("loss_surface: {} non-finite cells recorded as nan", g.nonfinite_cells);
  return g;
}

inline void write_surface_csv(const SurfaceGrid& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write surface grid to " + path);
  out.precision(17);
  out << "a,b,loss\n";
  for (std::size_t i = 0; i < g.a.size(); ++i)
    for (std::size_t j = 0; j < g.b.size(); ++j)
      out << g.a[i] << ',' << g.b[j] << ',' << g.loss(static_cast<Index>(i), static_cast<Index>(j)) << '\n';
}

}  // namespace widenet
