#pragma once

#include <string>

#include "widenet/architectures.hpp"
#include "widenet/core/optim.hpp"
#include "widenet/replay.hpp"

namespace widenet {

struct OfeNetConfig {
  bool enabled = true;
  BlockKind kind = BlockKind::densenet;
  int layers_s = 8;
  int units_s = 256;
  int layers_sa = 8;
  int units_sa = 256;
  Activation activation = Activation::swish;
  bool batch_norm = true;
  double tau = 0.005;
  AdamOptions adam;
  bool normalize_inputs = false;

  bool operator==(const OfeNetConfig&) const = default;
};

/// Online feature extractor:
///   z_s  = φ_s(s)
///   z_sa = φ_sa([z_s, a])
///   ŝ'   = f_pred(z_sa)   (single linear layer)
/// trained on L = mean_i ‖ŝ'_i − s'_i‖². A Polyak-tracked copy of all three
/// parts serves target evaluations.
///
/// When disabled the encoders are pass-throughs (z_s = s, z_sa = [s, a]) and
/// update() is a no-op.
class OfeNet {
 public:
  OfeNet() = default;
  OfeNet(int state_dim, int action_dim, OfeNetConfig cfg, Rng& rng) : cfg_(cfg), state_dim_(state_dim), action_dim_(action_dim) {
    if (state_dim < 1 || action_dim < 1) throw ConfigError("ofenet: state and action dims must be positive");
    if (!(cfg.tau >= 0 && cfg.tau <= 1)) throw ConfigError("ofenet: tau must lie in [0,1]");
    if (!cfg.enabled) return;
    online_ = Parts(spec_s(), spec_sa(), state_dim, "ofenet", rng);
    target_ = online_;
    rename(target_, "ofenet", "ofenet_target");
    norm_mean_ = Parameter("ofenet/normalizer/mean", Matrix::Zero(1, state_dim), ParamRole::bn_running_mean);
    norm_var_ = Parameter("ofenet/normalizer/var", Matrix::Ones(1, state_dim), ParamRole::bn_running_var);
    opt_ = Adam(online_parameters(), cfg.adam);
  }

  // The optimiser holds pointers into online_, so copies must rebuild it.
  OfeNet(const OfeNet& o) { *this = o; }
  OfeNet& operator=(const OfeNet& o) {
    if (this == &o) return *this;
    cfg_ = o.cfg_;
    state_dim_ = o.state_dim_;
    action_dim_ = o.action_dim_;
    online_ = o.online_;
    target_ = o.target_;
    norm_mean_ = o.norm_mean_;
    norm_var_ = o.norm_var_;
    norm_count_ = o.norm_count_;
    updates_ = o.updates_;
    if (cfg_.enabled) {
      opt_ = Adam(online_parameters(), cfg_.adam);
      opt_.set_step_count(o.opt_.step_count());
      opt_.first_moments() = o.opt_.first_moments();
      opt_.second_moments() = o.opt_.second_moments();
    }
    return *this;
  }

  const OfeNetConfig& config() const { return cfg_; }
  bool enabled() const { return cfg_.enabled; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  long updates() const { return updates_; }

  int state_feature_dim() const { return cfg_.enabled ? output_dim(spec_s()) : state_dim_; }
  int state_action_feature_dim() const {
    return cfg_.enabled ? output_dim(spec_sa()) : state_dim_ + action_dim_;
  }

  ConnectivitySpec spec_s() const {
    return {cfg_.kind, cfg_.layers_s, cfg_.units_s, cfg_.activation, cfg_.batch_norm, state_dim_};
  }
  ConnectivitySpec spec_sa() const {
    return {cfg_.kind, cfg_.layers_sa, cfg_.units_sa, cfg_.activation, cfg_.batch_norm,
            output_dim(spec_s()) + action_dim_};
  }

  Block& phi_s(bool target = false) { return parts(target).phi_s; }
  Block& phi_sa(bool target = false) { return parts(target).phi_sa; }
  DenseLayer& f_pred(bool target = false) { return parts(target).f_pred; }

  // -- recorded encoders --

  Var encode_state(Tape& t, Var s, Mode mode, bool use_target = false, bool update_stats = true) {
    require_cols(t.value(s), state_dim_, "ofenet encode_state");
    if (!cfg_.enabled) return s;
    return parts(use_target).phi_s.forward(t, normalize(t, s), mode, update_stats);
  }

  Var encode_state_action(Tape& t, Var z_s, Var a, Mode mode, bool use_target = false, bool update_stats = true) {
    require_cols(t.value(a), action_dim_, "ofenet encode_state_action");
    require_cols(t.value(z_s), state_feature_dim(), "ofenet encode_state_action features");
    Var in = ops::concat_cols(t, {z_s, a});
    if (!cfg_.enabled) return in;
    return parts(use_target).phi_sa.forward(t, in, mode, update_stats);
  }

  Var predict(Tape& t, Var z_sa, bool use_target = false) { return parts(use_target).f_pred.forward(t, z_sa); }

  /// mean_i ‖f_pred(z_sa,i) − s'_i‖² on the tape.
  Var aux_loss(Tape& t, const Matrix& s, const Matrix& a, const Matrix& s_next, Mode mode, bool update_stats = true) {
    if (!cfg_.enabled) throw StateError("ofenet: aux loss requested while disabled");
    if (s.rows() < 1) throw ShapeError("ofenet aux loss: empty batch");
    require_cols(s_next, state_dim_, "ofenet aux loss target");
    Var z_s = encode_state(t, t.constant(s), mode, false, update_stats);
    Var z_sa = encode_state_action(t, z_s, t.constant(a), mode, false, update_stats);
    Var err = ops::sub(t, predict(t, z_sa), t.constant(s_next));
    return ops::scale(t, ops::sum(t, ops::square(t, err)), 1.0 / static_cast<double>(s.rows()));
  }

  // -- pure evaluation --

  Matrix encode_state(const Matrix& s, Mode mode = Mode::eval, bool use_target = false) {
    Tape t(false);
    return t.value(encode_state(t, t.constant(s), mode, use_target));
  }

  Matrix encode_state_action(const Matrix& s, const Matrix& a, Mode mode = Mode::eval, bool use_target = false) {
    Tape t(false);
    Var z_s = encode_state(t, t.constant(s), mode, use_target);
    return t.value(encode_state_action(t, z_s, t.constant(a), mode, use_target));
  }

  /// Loss value without touching running statistics (eval mode).
  double aux_loss(const Batch& b) {
    Tape t(false);
    return t.scalar(aux_loss(t, b.s, b.a, b.s_next, Mode::eval));
  }

  /// One Adam step on the aux loss in train mode, then target tracking.
  /// Returns the pre-step loss.
  double update(const Batch& b) {
    if (!cfg_.enabled) return 0.0;
    if (b.size() < 2 && cfg_.batch_norm) throw DegenerateBatchError("ofenet update: batch norm needs >= 2 rows");
    if (cfg_.normalize_inputs) update_normalizer(b.s);
    Tape t;
    opt_.zero_grad();
    Var loss = aux_loss(t, b.s, b.a, b.s_next, Mode::train);
    const double value = t.scalar(loss);
    if (!std::isfinite(value))
      throw NumericError("ofenet update: non-finite aux loss at update " + std::to_string(updates_));
    t.backward(loss);
    opt_.step();
    update_target();
    ++updates_;
    return value;
  }

  void update_target() {
    auto tgt = target_parameters();
    auto on = online_parameters();
    polyak_update(tgt, on, cfg_.tau);
  }

  /// Online φ_s, φ_sa, f_pred, in that order.
  ParamList online_parameters() { return collect(online_); }
  ParamList target_parameters() { return collect(target_); }

  /// What a collector needs to compute z_s: φ_s plus the input normaliser.
  ParamList state_encoder_parameters() {
    ParamList out;
    if (!cfg_.enabled) return out;
    online_.phi_s.collect(out);
    out.push_back(&norm_mean_);
    out.push_back(&norm_var_);
    return out;
  }

  /// Every tensor that defines this extractor (for checkpoints).
  ParamList all_parameters() {
    ParamList out = online_parameters();
    for (auto* p : target_parameters()) out.push_back(p);
    if (cfg_.enabled) {
      out.push_back(&norm_mean_);
      out.push_back(&norm_var_);
    }
    return out;
  }

  Adam& optimizer() { return opt_; }

 private:
  struct Parts {
    Parts() = default;
    Parts(const ConnectivitySpec& s, const ConnectivitySpec& sa, int state_dim, const std::string& name, Rng& rng)
        : phi_s(s, name + "/phi_s", rng),
          phi_sa(sa, name + "/phi_sa", rng),
          f_pred(name + "/f_pred", output_dim(sa), state_dim, rng) {}
    Block phi_s, phi_sa;
    DenseLayer f_pred;
  };

  Parts& parts(bool target) { return target ? target_ : online_; }

  ParamList collect(Parts& p) {
    ParamList out;
    if (!cfg_.enabled) return out;
    p.phi_s.collect(out);
    p.phi_sa.collect(out);
    p.f_pred.collect(out);
    return out;
  }

  static void rename(Parts& p, const std::string& from, const std::string& to) {
    ParamList list;
    p.phi_s.collect(list);
    p.phi_sa.collect(list);
    p.f_pred.collect(list);
    for (auto* q : list)
      if (q->name.rfind(from, 0) == 0) q->name = to + q->name.substr(from.size());
  }

  Var normalize(Tape& t, Var s) {
    if (!cfg_.normalize_inputs) return s;
    const Matrix& x = t.value(s);
    Matrix shift = norm_mean_.value.replicate(x.rows(), 1);
    Matrix inv = (norm_var_.value.array() + 1e-8).rsqrt().matrix().replicate(x.rows(), 1);
    return ops::mul_const(t, ops::add_const(t, s, -shift), inv);
  }

  // Streaming per-dimension mean and variance (Chan et al. merge).
  void update_normalizer(const Matrix& s) {
    const double n = static_cast<double>(s.rows());
    Matrix mu = s.colwise().mean();
    Matrix var = (s.rowwise() - mu.row(0)).array().square().colwise().sum() / n;
    const double total = norm_count_ + n;
    Matrix delta = mu - norm_mean_.value;
    Matrix new_mean = norm_mean_.value + delta * (n / total);
    Matrix m2 = norm_var_.value * norm_count_ + var * n + delta.cwiseAbs2() * (norm_count_ * n / total);
    norm_mean_.value = new_mean;
    norm_var_.value = m2 / total;
    norm_count_ = total;
  }

  OfeNetConfig cfg_;
  int state_dim_ = 0, action_dim_ = 0;
  Parts online_, target_;
  Parameter norm_mean_, norm_var_;
  double norm_count_ = 0.0;
  Adam opt_;
  long updates_ = 0;
};

}  // namespace widenet
