#pragma once

#include <memory>
#include <numbers>
#include <optional>
#include <string>

#include "widenet/core/tensor.hpp"

namespace widenet {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Matrix action_low;   // 1 × action_dim
  Matrix action_high;  // 1 × action_dim
  int max_steps = 1;
};

struct StepResult {
  Matrix state;
  double reward = 0.0;
  bool terminal = false;   // true end of the MDP: do not bootstrap
  bool truncated = false;  // time limit: keep bootstrapping
  bool done() const { return terminal || truncated; }
};

/// Continuous-control environment with a time limit. Observations and
/// actions are 1×n rows. Out-of-bound actions are clipped and counted.
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  long clipped_actions() const { return clipped_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }

  Matrix reset(std::uint64_t seed) {
    rng_.seed(seed);
    steps_ = 0;
    done_ = false;
    return do_reset();
  }

  StepResult step(const Matrix& action) {
    if (done_) throw StateError(spec_.name + ": step() on a finished episode; call reset()");
    require_cols(action, spec_.action_dim, "env step action");
    Matrix a = action.cwiseMax(spec_.action_low).cwiseMin(spec_.action_high);
    if (a != action) ++clipped_;
    StepResult r = do_step(a);
    ++steps_;
    if (steps_ >= spec_.max_steps) r.truncated = true;
    done_ = r.done();
    return r;
  }

 protected:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}
  virtual Matrix do_reset() = 0;
  virtual StepResult do_step(const Matrix& action) = 0;

  EnvSpec spec_;
  Rng rng_;

 private:
  long clipped_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

inline EnvSpec box_spec(std::string name, int state_dim, int action_dim, double bound, int max_steps) {
  return EnvSpec{std::move(name), state_dim, action_dim, Matrix::Constant(1, action_dim, -bound),
                 Matrix::Constant(1, action_dim, bound), max_steps};
}

struct PendulumParams {
  double g = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double dt = 0.05;
  double max_speed = 8.0;
  double max_torque = 2.0;
  int max_steps = 200;
  /// Fixed (θ, θ̇) start instead of the seeded uniform draw.
  std::optional<std::pair<double, double>> initial_state;
};

/// Torque-limited swing-up. θ = 0 is upright. Observation [cos θ, sin θ, θ̇].
///   θ̈ = (3g / 2l)·sin θ + (3 / m l²)·u
///   reward = −(θ_norm² + 0.1·θ̇² + 0.001·u²), evaluated before the step
class Pendulum : public Env {
 public:
  explicit Pendulum(PendulumParams p = {}) : Env(box_spec("pendulum", 3, 1, p.max_torque, p.max_steps)), p_(p) {}

  static double angle_normalize(double x) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double y = std::fmod(x + std::numbers::pi, two_pi);
    if (y < 0) y += two_pi;
    return y - std::numbers::pi;
  }

  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

 protected:
  Matrix do_reset() override {
    if (p_.initial_state) {
      theta_ = p_.initial_state->first;
      theta_dot_ = p_.initial_state->second;
    } else {
      std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi), vel(-1.0, 1.0);
      theta_ = angle(rng_);
      theta_dot_ = vel(rng_);
    }
    return observe();
  }

  StepResult do_step(const Matrix& action) override {
    const double u = action(0, 0);
    const double th = angle_normalize(theta_);
    const double reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
    double acc = 3.0 * p_.g / (2.0 * p_.length) * std::sin(theta_) + 3.0 / (p_.mass * p_.length * p_.length) * u;
    theta_dot_ = std::clamp(theta_dot_ + acc * p_.dt, -p_.max_speed, p_.max_speed);
    theta_ += theta_dot_ * p_.dt;
    return StepResult{observe(), reward, false, false};
  }

 private:
  Matrix observe() const {
    Matrix o(1, 3);
    o << std::cos(theta_), std::sin(theta_), theta_dot_;
    return o;
  }

  PendulumParams p_;
  double theta_ = 0.0, theta_dot_ = 0.0;
};

struct PointMassParams {
  double dt = 0.1;
  double max_accel = 1.0;
  int max_steps = 100;
};

/// Planar double integrator driven toward the origin. State [p_x, p_y, v_x, v_y];
/// reward −‖p‖² − 0.01‖u‖² on the pre-step state.
class PointMass : public Env {
 public:
  explicit PointMass(PointMassParams p = {}) : Env(box_spec("pointmass", 4, 2, p.max_accel, p.max_steps)), p_(p) {}

 protected:
  Matrix do_reset() override {
    state_ = Matrix::Zero(1, 4);
    std::uniform_real_distribution<double> pos(-1.0, 1.0);
    state_(0, 0) = pos(rng_);
    state_(0, 1) = pos(rng_);
    return state_;
  }

  StepResult do_step(const Matrix& action) override {
    const double reward = -state_.leftCols(2).squaredNorm() - 0.01 * action.squaredNorm();
    state_(0, 2) += action(0, 0) * p_.dt;
    state_(0, 3) += action(0, 1) * p_.dt;
    state_(0, 0) += state_(0, 2) * p_.dt;
    state_(0, 1) += state_(0, 3) * p_.dt;
    return StepResult{state_, reward, false, false};
  }

 private:
  PointMassParams p_;
  Matrix state_;
};

struct LinearDynamics {
  Matrix A;  // state_dim × state_dim
  Matrix B;  // state_dim × action_dim
  double noise = 0.0;
  double action_bound = 1.0;
  int max_steps = 100;

  bool operator==(const LinearDynamics& o) const {
    auto same = [](const Matrix& x, const Matrix& y) { return x.rows() == y.rows() && x.cols() == y.cols() && x == y; };
    return same(A, o.A) && same(B, o.B) && noise == o.noise && action_bound == o.action_bound &&
           max_steps == o.max_steps;
  }

  static LinearDynamics defaults() {
    LinearDynamics d;
    d.A.resize(4, 4);
    d.A << 0.9, 0.2, 0.0, 0.0,  //
        -0.2, 0.9, 0.0, 0.0,    //
        0.0, 0.0, 0.8, 0.1,     //
        0.0, 0.0, 0.0, 0.7;
    d.B.resize(4, 2);
    d.B << 0.5, 0.0,  //
        0.0, 0.5,     //
        0.3, 0.0,     //
        0.0, 0.3;
    return d;
  }
};

/// s' = A s + B a + σ ξ with ξ standard normal; reset draws s from N(0, I).
/// Reward −‖s‖² − 0.01‖a‖².
class LinearSystem : public Env {
 public:
  explicit LinearSystem(LinearDynamics d = LinearDynamics::defaults())
      : Env(box_spec("linsys", static_cast<int>(d.A.rows()), static_cast<int>(d.B.cols()), d.action_bound, d.max_steps)),
        d_(std::move(d)) {
    if (d_.A.rows() != d_.A.cols() || d_.B.rows() != d_.A.rows() || d_.B.cols() < 1)
      throw ConfigError("linsys: A must be square and B must have A's row count");
    if (d_.noise < 0) throw ConfigError("linsys: noise must be non-negative");
  }

  const LinearDynamics& dynamics() const { return d_; }

 protected:
  Matrix do_reset() override {
    state_ = gaussian(1, d_.A.rows(), rng_);
    return state_;
  }

  StepResult do_step(const Matrix& action) override {
    const double reward = -state_.squaredNorm() - 0.01 * action.squaredNorm();
    Matrix next = state_ * d_.A.transpose() + action * d_.B.transpose();
    if (d_.noise > 0) next += d_.noise * gaussian(1, d_.A.rows(), rng_);
    state_ = next;
    return StepResult{state_, reward, false, false};
  }

 private:
  LinearDynamics d_;
  Matrix state_;
};

struct EnvConfig {
  std::string name = "pendulum";
  std::optional<LinearDynamics> dynamics;  // linsys override

  bool operator==(const EnvConfig&) const = default;
};

inline std::unique_ptr<Env> make_env(const EnvConfig& cfg) {
  if (cfg.name == "pendulum") return std::make_unique<Pendulum>();
  if (cfg.name == "pointmass") return std::make_unique<PointMass>();
  if (cfg.name == "linsys") return std::make_unique<LinearSystem>(cfg.dynamics.value_or(LinearDynamics::defaults()));
  throw ConfigError("unknown environment '" + cfg.name + "'");
}

}  // namespace widenet
