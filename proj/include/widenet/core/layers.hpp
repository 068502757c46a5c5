#pragma once

#include <optional>
#include <string>

#include "widenet/core/ops.hpp"

namespace widenet {

enum class Mode { train, eval };

/// Fully-connected layer y = x·W + b. W is in_dim × out_dim, b is 1 × out_dim.
/// Weights start uniform in ±1/√in_dim, biases at zero.
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(const std::string& name, Index in_dim, Index out_dim, Rng& rng, bool with_bias = true,
             ParamRole weight_role = ParamRole::weight) {
    if (in_dim < 1 || out_dim < 1)
      throw ConfigError("dense layer '" + name + "' needs positive dims, got " + std::to_string(in_dim) + "x" +
                        std::to_string(out_dim));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    weight_ = Parameter(name + "/weight", uniform(in_dim, out_dim, rng, -bound, bound), weight_role);
    if (with_bias) bias_ = Parameter(name + "/bias", Matrix::Zero(1, out_dim), ParamRole::bias);
  }

  Index in_dim() const { return weight_.value.rows(); }
  Index out_dim() const { return weight_.value.cols(); }
  bool has_bias() const { return bias_.has_value(); }

  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }
  Parameter& bias() { return *bias_; }
  const Parameter& bias() const { return *bias_; }

  Index parameter_count() const { return weight_.size() + (bias_ ? bias_->size() : 0); }

  Var forward(Tape& t, Var x) {
    if (t.value(x).cols() != in_dim())
      throw ShapeError("dense '" + weight_.name + "': expected " + std::to_string(in_dim()) + " inputs, got " +
                       shape_str(t.value(x)));
    Var w = t.param(weight_);
    Var b = bias_ ? t.param(*bias_) : Var{};
    return ops::affine(t, x, w, b);
  }

  void collect(ParamList& out) {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
  }

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
};

/// y = x·W + b without recording.
inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  require_cols(x, layer.in_dim(), "dense_forward");
  Matrix y = x * layer.weight().value;
  if (layer.has_bias()) y.rowwise() += layer.bias().value.row(0);
  return y;
}

struct BatchNormOptions {
  double momentum = 0.99;
  double epsilon = 1e-3;
};

/// Batch normalisation over the batch (row) axis. Train mode normalises by
/// batch statistics and folds them into the running statistics:
///   running ← momentum·running + (1 − momentum)·batch
/// with the unbiased batch variance. Eval mode uses running statistics only.
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, Index units, BatchNormOptions opts = {}) : opts_(opts) {
    if (units < 1) throw ConfigError("batch norm '" + name + "' needs positive units");
    if (!(opts.momentum > 0 && opts.momentum < 1)) throw ConfigError("batch norm momentum must lie in (0,1)");
    if (!(opts.epsilon > 0)) throw ConfigError("batch norm epsilon must be positive");
    gamma_ = Parameter(name + "/gamma", Matrix::Ones(1, units), ParamRole::bn_gamma);
    beta_ = Parameter(name + "/beta", Matrix::Zero(1, units), ParamRole::bn_beta);
    mean_ = Parameter(name + "/running_mean", Matrix::Zero(1, units), ParamRole::bn_running_mean);
    var_ = Parameter(name + "/running_var", Matrix::Ones(1, units), ParamRole::bn_running_var);
  }

  Index units() const { return gamma_.value.cols(); }
  const BatchNormOptions& options() const { return opts_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  const Parameter& running_mean() const { return mean_; }
  const Parameter& running_var() const { return var_; }
  Parameter& running_mean() { return mean_; }
  Parameter& running_var() { return var_; }
  Index parameter_count() const { return 4 * units(); }

  /// `update_stats = false` keeps train-mode normalisation but leaves the
  /// running statistics untouched.
  Var forward(Tape& t, Var x, Mode mode, bool update_stats = true) {
    require_cols(t.value(x), units(), "batchnorm");
    Var g = t.param(gamma_);
    Var b = t.param(beta_);
    if (mode == Mode::eval) return ops::batchnorm_eval(t, x, g, b, mean_.value, var_.value, opts_.epsilon);
    Matrix mu, var;
    Var y = ops::batchnorm_train(t, x, g, b, opts_.epsilon, &mu, &var);
    if (update_stats) {
      const double n = static_cast<double>(t.value(x).rows());
      const double m = opts_.momentum;
      mean_.value = m * mean_.value + (1.0 - m) * mu;
      var_.value = m * var_.value + (1.0 - m) * (var * (n / (n - 1.0)));
    }
    return y;
  }

  void collect(ParamList& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&mean_);
    out.push_back(&var_);
  }

 private:
  BatchNormOptions opts_;
  Parameter gamma_, beta_, mean_, var_;
};

inline Matrix batchnorm_forward(BatchNormLayer& layer, const Matrix& x, Mode mode) {
  Tape t(false);
  Var in = t.constant(x);
  return t.value(layer.forward(t, in, mode));
}

/// Mean over elements of the Huber penalty.
inline double huber_loss(const Matrix& residual, double delta) {
  if (!(delta > 0)) throw ConfigError("huber delta must be positive");
  if (residual.size() == 0) return 0.0;
  double acc = 0.0;
  for (Index i = 0; i < residual.size(); ++i) {
    const double v = residual.data()[i];
    const double av = std::abs(v);
    acc += av <= delta ? 0.5 * v * v : delta * (av - 0.5 * delta);
  }
  return acc / static_cast<double>(residual.size());
}

}  // namespace widenet
