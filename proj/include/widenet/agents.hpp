#pragma once

#include <array>
#include <memory>
#include <numbers>
#include <optional>
#include <string>

#include "widenet/architectures.hpp"
#include "widenet/core/optim.hpp"
#include "widenet/ofenet.hpp"
#include "widenet/replay.hpp"

namespace widenet {

enum class AgentKind { sac, td3 };

inline std::string to_string(AgentKind k) { return k == AgentKind::sac ? "sac" : "td3"; }

inline AgentKind parse_agent_kind(const std::string& s) {
  if (s == "sac") return AgentKind::sac;
  if (s == "td3") return AgentKind::td3;
  throw ConfigError("unknown agent '" + s + "' (expected sac|td3)");
}

/// Actor and critic blocks leave `input_dim` at 0; it is filled from the
/// feature extractor's output widths.
struct AgentConfig {
  AgentKind kind = AgentKind::sac;
  ConnectivitySpec actor{BlockKind::densenet, 2, 2048, Activation::swish, false, 0};
  ConnectivitySpec critic{BlockKind::densenet, 2, 2048, Activation::swish, false, 0};
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 256;
  double huber_delta = 1.0;
  AdamOptions actor_adam;
  AdamOptions critic_adam;
  AdamOptions alpha_adam;
  // SAC
  double initial_alpha = 1.0;
  bool auto_alpha = true;
  std::optional<double> target_entropy;  // default −action_dim
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  // TD3
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  int policy_delay = 2;
  double exploration_noise = 0.1;

  long warmup_steps = 10000;
  bool joint_finetune = false;

  bool operator==(const AgentConfig&) const = default;

  static AgentConfig defaults(AgentKind kind) {
    AgentConfig c;
    c.kind = kind;
    if (kind == AgentKind::td3) {
      c.actor.batch_norm = true;
      c.critic.batch_norm = true;
      c.warmup_steps = 100000;
    }
    return c;
  }

  void validate() const {
    if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("agent gamma must lie in [0,1]");
    if (!(tau >= 0 && tau <= 1)) throw ConfigError("agent tau must lie in [0,1]");
    if (batch_size < 1) throw ConfigError("agent batch_size must be >= 1");
    if (!(huber_delta > 0)) throw ConfigError("agent huber_delta must be positive");
    if (policy_delay < 1) throw ConfigError("agent policy_delay must be >= 1");
    if (warmup_steps < 0) throw ConfigError("agent warmup_steps must be >= 0");
    if (!(initial_alpha > 0)) throw ConfigError("agent initial_alpha must be positive");
    if (!(log_std_min < log_std_max)) throw ConfigError("agent log_std_min must be below log_std_max");
    if (joint_finetune)
      throw ConfigError("joint_finetune=true is not supported: RL gradients stop at the OFENet features");
  }
};

enum class Behavior { random, policy };

/// Uniform-random actions for the first `warmup_steps` environment steps.
inline Behavior warmup_policy(long env_steps, long warmup_steps) {
  return env_steps < warmup_steps ? Behavior::random : Behavior::policy;
}

struct ActionBounds {
  Matrix low;   // 1 × action_dim
  Matrix high;  // 1 × action_dim
  Index dim() const { return low.cols(); }
  Matrix center() const { return 0.5 * (low + high); }
  Matrix half_range() const { return 0.5 * (high - low); }
  Matrix clip(const Matrix& a) const {
    return a.cwiseMax(low.replicate(a.rows(), 1)).cwiseMin(high.replicate(a.rows(), 1));
  }
  Matrix random(Index n, Rng& rng) const {
    Matrix u = uniform(n, dim(), rng, 0.0, 1.0);
    return low.replicate(n, 1) + u.cwiseProduct((high - low).replicate(n, 1));
  }
};

/// Maps a policy head's output to environment actions. Shared by the
/// learner-side agents and the collector-side policy runners.
///   SAC: head = [μ, log σ], a = c + h·tanh(μ + σ·ε) (ε = 0 when deterministic)
///   TD3: head = μ,          a = clip(c + h·tanh(μ) + h·σ_explore·ε)
inline Matrix head_to_action(AgentKind kind, const Matrix& head, const AgentConfig& cfg, const ActionBounds& b,
                             bool stochastic, Rng& rng) {
  const Index n = head.rows(), ad = b.dim();
  Matrix c = b.center().replicate(n, 1), h = b.half_range().replicate(n, 1);
  if (!all_finite(head)) throw NumericError("policy produced a non-finite output");
  if (kind == AgentKind::sac) {
    Matrix u = head.leftCols(ad);
    if (stochastic) {
      Matrix log_std = head.rightCols(ad).cwiseMax(cfg.log_std_min).cwiseMin(cfg.log_std_max);
      u += log_std.array().exp().matrix().cwiseProduct(gaussian(n, ad, rng));
    }
    return c + h.cwiseProduct(Matrix(u.array().tanh()));
  }
  Matrix a = c + h.cwiseProduct(Matrix(head.array().tanh()));
  if (stochastic) a += cfg.exploration_noise * h.cwiseProduct(gaussian(n, ad, rng));
  return b.clip(a);
}

struct CriticResult {
  double loss = 0.0;
  std::vector<double> td_errors;  // mean over the twin critics of |residual|
  double q_mean = 0.0;
};

struct UpdateResult {
  CriticResult critic;
  std::optional<double> actor_loss;  // empty when the actor did not step
  double alpha = 0.0;
};

/// Shared machinery of the twin-critic agents. Critics read z_sa, the actor
/// reads z_s; all features come from the OfeNet in eval mode and are treated
/// as constants for the RL losses. The network being optimised runs in train
/// mode; every other network runs in eval mode.
class Agent {
 public:
  Agent(AgentConfig cfg, int state_feature_dim, int state_action_feature_dim, ActionBounds bounds, Rng& rng)
      : cfg_(std::move(cfg)), bounds_(std::move(bounds)) {
    cfg_.validate();
    if (bounds_.low.cols() != bounds_.high.cols() || bounds_.dim() < 1) throw ConfigError("agent: bad action bounds");
    if ((bounds_.high - bounds_.low).minCoeff() <= 0) throw ConfigError("agent: action bounds must satisfy low < high");
    const int ad = static_cast<int>(bounds_.dim());
    const int head = cfg_.kind == AgentKind::sac ? 2 * ad : ad;
    actor_ = Network(cfg_.actor.with_input(state_feature_dim), head, "actor", rng);
    for (int i = 0; i < 2; ++i) {
      critic_[i] = Network(cfg_.critic.with_input(state_action_feature_dim), 1, "critic" + std::to_string(i + 1), rng);
      critic_target_[i] = critic_[i];
    }
    rename(critic_target_[0], "critic1", "critic1_target");
    rename(critic_target_[1], "critic2", "critic2_target");
    build_optimizers();
  }

  virtual ~Agent() = default;
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  AgentKind kind() const { return cfg_.kind; }
  const AgentConfig& config() const { return cfg_; }
  const ActionBounds& bounds() const { return bounds_; }
  int action_dim() const { return static_cast<int>(bounds_.dim()); }
  long critic_updates() const { return critic_updates_; }
  long actor_updates() const { return actor_updates_; }

  Network& actor() { return actor_; }
  Network& critic(int i) { return critic_.at(static_cast<std::size_t>(i)); }
  Network& target_critic(int i) { return critic_target_.at(static_cast<std::size_t>(i)); }

  /// Action for features z_s (rows). Deterministic when !stochastic.
  Matrix act(const Matrix& z_s, bool stochastic, Rng& rng) {
    return head_to_action(cfg_.kind, actor_.forward(z_s, Mode::eval), cfg_, bounds_, stochastic, rng);
  }

  virtual double alpha() const { return 0.0; }

  /// Bootstrapped targets y = r + γ(1 − done)·V'(s'). Draws its noise from
  /// `rng` (n × action_dim standard normals, drawn first).
  virtual Matrix critic_targets(const Batch& b, OfeNet& ofe, Rng& rng) = 0;

  /// Σ_k mean_i w_i·huber(Q_k(z_sa,i) − y_i) over the twin critics.
  Var critic_loss(Tape& t, const Matrix& z_sa, const Matrix& y, const Matrix& w, Matrix* residuals = nullptr) {
    if (w.rows() != z_sa.rows() || w.cols() != 1) throw ShapeError("critic loss: is_weights must be n x 1");
    Var x = t.constant(z_sa);
    Var total;
    Matrix res(z_sa.rows(), 2);
    for (int k = 0; k < 2; ++k) {
      Var q = critic_[k].forward(t, x, Mode::train);
      Var r = ops::sub(t, q, t.constant(y));
      res.col(k) = t.value(r).col(0);
      Var l = ops::scale(t, ops::sum(t, ops::mul_const(t, ops::huber(t, r, cfg_.huber_delta), w)),
                         1.0 / static_cast<double>(z_sa.rows()));
      total = k == 0 ? l : ops::add(t, total, l);
    }
    if (residuals) *residuals = res;
    return total;
  }

  CriticResult critic_update(const Batch& b, const Matrix& is_weights, OfeNet& ofe, Rng& rng) {
    Matrix y = critic_targets(b, ofe, rng);
    if (!all_finite(y)) throw NumericError("critic update: non-finite bootstrap target, step rejected");
    Matrix z_sa = ofe.encode_state_action(b.s, b.a);
    Tape t;
    critic_opt_.zero_grad();
    Matrix res;
    Var loss = critic_loss(t, z_sa, y, is_weights, &res);
    CriticResult out;
    out.loss = t.scalar(loss);
    if (!std::isfinite(out.loss)) throw NumericError("critic update: non-finite loss, step rejected");
    t.backward(loss);
    critic_opt_.step();
    ++critic_updates_;
    out.td_errors.resize(static_cast<std::size_t>(res.rows()));
    for (Index i = 0; i < res.rows(); ++i)
      out.td_errors[static_cast<std::size_t>(i)] = 0.5 * (std::abs(res(i, 0)) + std::abs(res(i, 1)));
    out.q_mean = (res.rowwise().sum() / 2.0 + y).mean();
    return out;
  }

  /// Policy objective on the tape for fixed features and noise. Critic and
  /// extractor parameters enter as constants, so only the actor accumulates
  /// gradients; the action gradient still flows through φ_sa and the critics.
  virtual Var actor_loss(Tape& t, const Matrix& z_s, OfeNet& ofe, const Matrix& noise) = 0;

  /// Steps the actor (and temperature) when due, then Polyak-updates targets.
  virtual std::optional<double> actor_update(const Batch& b, OfeNet& ofe, Rng& rng) = 0;

  UpdateResult update(const Batch& b, const Matrix& is_weights, OfeNet& ofe, Rng& rng) {
    UpdateResult r;
    r.critic = critic_update(b, is_weights, ofe, rng);
    r.actor_loss = actor_update(b, ofe, rng);
    r.alpha = alpha();
    return r;
  }

  ParamList policy_parameters() { return actor_.parameters(); }

  /// All network tensors (online and target), for checkpoints and snapshots.
  virtual ParamList all_parameters() {
    ParamList out = actor_.parameters();
    for (auto& c : critic_) c.collect(out);
    for (auto& c : critic_target_) c.collect(out);
    return out;
  }

  ParamList critic_parameters() {
    ParamList out;
    for (auto& c : critic_) c.collect(out);
    return out;
  }

  ParamList critic_target_parameters() {
    ParamList out;
    for (auto& c : critic_target_) c.collect(out);
    return out;
  }

 protected:
  static void rename(Network& n, const std::string& from, const std::string& to) {
    for (auto* p : n.parameters())
      if (p->name.rfind(from, 0) == 0) p->name = to + p->name.substr(from.size());
  }

  void build_optimizers() {
    actor_opt_ = Adam(actor_.parameters(), cfg_.actor_adam);
    critic_opt_ = Adam(critic_parameters(), cfg_.critic_adam);
  }

  void update_critic_targets() {
    auto tgt = critic_target_parameters();
    auto on = critic_parameters();
    polyak_update(tgt, on, cfg_.tau);
  }

  /// min_k Q_k over the given networks, eval mode, on the tape.
  Var min_q(Tape& t, std::array<Network, 2>& nets, Var z_sa) {
    Var q1 = nets[0].forward(t, z_sa, Mode::eval);
    Var q2 = nets[1].forward(t, z_sa, Mode::eval);
    return ops::minimum(t, q1, q2);
  }

  Matrix action_center(Index n) const { return bounds_.center().replicate(n, 1); }
  Matrix action_half(Index n) const { return bounds_.half_range().replicate(n, 1); }

  AgentConfig cfg_;
  ActionBounds bounds_;
  Network actor_;
  std::array<Network, 2> critic_, critic_target_;
  Adam actor_opt_, critic_opt_;
  long critic_updates_ = 0;
  long actor_updates_ = 0;
};

/// Soft actor-critic with a tanh-squashed Gaussian policy and automatic
/// temperature tuning toward target entropy −action_dim. Log-probabilities
/// are those of the squashed action in [−1, 1]^d (the affine rescale to the
/// environment bounds only shifts entropy by a constant).
class SacAgent : public Agent {
 public:
  SacAgent(AgentConfig cfg, int zs_dim, int zsa_dim, ActionBounds bounds, Rng& rng)
      : Agent(check(std::move(cfg)), zs_dim, zsa_dim, std::move(bounds), rng) {
    log_alpha_ = Parameter("sac/log_alpha", Matrix::Constant(1, 1, std::log(cfg_.initial_alpha)), ParamRole::scalar);
    alpha_opt_ = Adam(ParamList{&log_alpha_}, cfg_.alpha_adam);
  }

  double alpha() const override { return std::exp(log_alpha_.value(0, 0)); }
  double target_entropy() const { return cfg_.target_entropy.value_or(-static_cast<double>(action_dim())); }
  Parameter& log_alpha() { return log_alpha_; }

  struct Sample {
    Var action;    // n × d, environment scale
    Var log_prob;  // n × 1
  };

  /// Reparameterised sample a = c + h·tanh(μ + σ·ε) with
  ///   log π = Σ_j [−½ε_j² − log σ_j − ½ log 2π − log(1 − tanh²(u_j) + 1e-6)].
  Sample sample(Tape& t, Var head, const Matrix& noise) {
    const Index n = t.value(head).rows(), d = action_dim();
    require_cols(noise, d, "sac sample noise");
    Var mu = ops::slice_cols(t, head, 0, d);
    Var log_std = ops::clamp(t, ops::slice_cols(t, head, d, d), cfg_.log_std_min, cfg_.log_std_max);
    Var u = ops::add(t, mu, ops::mul_const(t, ops::exp(t, log_std), noise));
    Var squashed = ops::tanh(t, u);
    Var a = ops::add_const(t, ops::mul_const(t, squashed, action_half(n)), action_center(n));
    Var jac = ops::log(t, ops::add_scalar(t, ops::scale(t, ops::square(t, squashed), -1.0), 1.0 + 1e-6));
    const Matrix base =
        (-0.5 * noise.array().square() - 0.5 * std::log(2.0 * std::numbers::pi)).matrix();
    Var per_dim = ops::sub(t, ops::add_const(t, ops::scale(t, log_std, -1.0), base), jac);
    return {a, ops::sum_cols(t, per_dim)};
  }

  Matrix critic_targets(const Batch& b, OfeNet& ofe, Rng& rng) override {
    const Index n = b.size();
    Matrix noise = gaussian(n, action_dim(), rng);
    Tape t(false);
    Var s_next = t.constant(b.s_next);
    Var z_next = ofe.encode_state(t, s_next, Mode::eval);
    Var head = actor_.forward(t, z_next, Mode::eval);
    Sample smp = sample(t, head, noise);
    Var zt_next = ofe.encode_state(t, s_next, Mode::eval, true);
    Var zt_sa = ofe.encode_state_action(t, zt_next, smp.action, Mode::eval, true);
    Var q = min_q(t, critic_target_, zt_sa);
    Matrix v = t.value(q) - alpha() * t.value(smp.log_prob);
    return b.r + cfg_.gamma * (Matrix::Ones(n, 1) - b.done).cwiseProduct(v);
  }

  /// mean_i [α·log π(a_i|s_i) − min_k Q_k(z_sa(s_i, a_i))]
  Var actor_loss(Tape& t, const Matrix& z_s, OfeNet& ofe, const Matrix& noise) override {
    Sample smp = sample(t, actor_.forward(t, t.constant(z_s), Mode::train), noise);
    last_log_prob_ = t.value(smp.log_prob);
    FrozenParams frozen(t);
    Var z_sa = ofe.encode_state_action(t, t.constant(z_s), smp.action, Mode::eval);
    Var q = min_q(t, critic_, z_sa);
    Var obj = ops::sub(t, ops::scale(t, smp.log_prob, alpha()), q);
    return ops::mean(t, obj);
  }

  std::optional<double> actor_update(const Batch& b, OfeNet& ofe, Rng& rng) override {
    const Matrix z_s = ofe.encode_state(b.s);
    const Matrix noise = gaussian(b.size(), action_dim(), rng);
    Tape t;
    actor_opt_.zero_grad();
    Var loss = actor_loss(t, z_s, ofe, noise);
    const double value = t.scalar(loss);
    if (!std::isfinite(value)) throw NumericError("sac actor update: non-finite loss, step rejected");
    t.backward(loss);
    actor_opt_.step();
    if (cfg_.auto_alpha) temperature_step(last_log_prob_);
    update_critic_targets();
    ++actor_updates_;
    return value;
  }

  /// d/d log α of −mean(log α · (log π + H̄)) = −mean(log π + H̄).
  double temperature_gradient(const Matrix& log_prob) const { return -(log_prob.array() + target_entropy()).mean(); }

  void temperature_step(const Matrix& log_prob) {
    alpha_opt_.zero_grad();
    log_alpha_.grad(0, 0) = temperature_gradient(log_prob);
    alpha_opt_.step();
  }

  ParamList all_parameters() override {
    ParamList out = Agent::all_parameters();
    out.push_back(&log_alpha_);
    return out;
  }

 private:
  static AgentConfig check(AgentConfig c) {
    if (c.kind != AgentKind::sac) throw ConfigError("SacAgent built from a non-sac config");
    return c;
  }

  Parameter log_alpha_;
  Adam alpha_opt_;
  Matrix last_log_prob_;
};

/// TD3: deterministic tanh policy, clipped target-policy smoothing, twin
/// critics with min backup, and actor/target updates every `policy_delay`
/// critic steps.
class Td3Agent : public Agent {
 public:
  Td3Agent(AgentConfig cfg, int zs_dim, int zsa_dim, ActionBounds bounds, Rng& rng)
      : Agent(check(std::move(cfg)), zs_dim, zsa_dim, std::move(bounds), rng) {
    actor_target_ = actor_;
    rename(actor_target_, "actor", "actor_target");
  }

  Network& target_actor() { return actor_target_; }

  Matrix critic_targets(const Batch& b, OfeNet& ofe, Rng& rng) override {
    const Index n = b.size();
    Matrix noise = (cfg_.policy_noise * gaussian(n, action_dim(), rng)).cwiseMax(-cfg_.noise_clip).cwiseMin(cfg_.noise_clip);
    Tape t(false);
    Var zt_next = ofe.encode_state(t, t.constant(b.s_next), Mode::eval, true);
    Matrix mu = t.value(actor_target_.forward(t, zt_next, Mode::eval));
    Matrix a = action_center(n) + action_half(n).cwiseProduct(Matrix(mu.array().tanh()) + noise);
    a = bounds_.clip(a);
    Var zt_sa = ofe.encode_state_action(t, zt_next, t.constant(a), Mode::eval, true);
    Matrix v = t.value(min_q(t, critic_target_, zt_sa));
    return b.r + cfg_.gamma * (Matrix::Ones(n, 1) - b.done).cwiseProduct(v);
  }

  /// −mean_i Q_1(z_sa(s_i, π(s_i)))
  Var actor_loss(Tape& t, const Matrix& z_s, OfeNet& ofe, const Matrix&) override {
    const Index n = z_s.rows();
    Var mu = actor_.forward(t, t.constant(z_s), Mode::train);
    Var a = ops::add_const(t, ops::mul_const(t, ops::tanh(t, mu), action_half(n)), action_center(n));
    FrozenParams frozen(t);
    Var z_sa = ofe.encode_state_action(t, t.constant(z_s), a, Mode::eval);
    Var q = critic_[0].forward(t, z_sa, Mode::eval);
    return ops::scale(t, ops::mean(t, q), -1.0);
  }

  bool actor_due() const { return critic_updates_ > 0 && critic_updates_ % cfg_.policy_delay == 0; }

  std::optional<double> actor_update(const Batch& b, OfeNet& ofe, Rng&) override {
    if (!actor_due()) return std::nullopt;
    const Matrix z_s = ofe.encode_state(b.s);
    Tape t;
    actor_opt_.zero_grad();
    Var loss = actor_loss(t, z_s, ofe, Matrix());
    const double value = t.scalar(loss);
    if (!std::isfinite(value)) throw NumericError("td3 actor update: non-finite loss, step rejected");
    t.backward(loss);
    actor_opt_.step();
    update_critic_targets();
    auto tgt = actor_target_.parameters();
    auto on = actor_.parameters();
    polyak_update(tgt, on, cfg_.tau);
    ++actor_updates_;
    return value;
  }

  ParamList all_parameters() override {
    ParamList out = Agent::all_parameters();
    actor_target_.collect(out);
    return out;
  }

 private:
  static AgentConfig check(AgentConfig c) {
    if (c.kind != AgentKind::td3) throw ConfigError("Td3Agent built from a non-td3 config");
    return c;
  }

  Network actor_target_;
};

inline std::unique_ptr<Agent> make_agent(const AgentConfig& cfg, int zs_dim, int zsa_dim, ActionBounds bounds,
                                         Rng& rng) {
  if (cfg.kind == AgentKind::sac) return std::make_unique<SacAgent>(cfg, zs_dim, zsa_dim, std::move(bounds), rng);
  return std::make_unique<Td3Agent>(cfg, zs_dim, zsa_dim, std::move(bounds), rng);
}

}  // namespace widenet
