#pragma once

#include <optional>
#include <string>
#include <vector>

#include "widenet/core/layers.hpp"

namespace widenet {

enum class BlockKind { mlp, resnet, densenet, d2rl };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::mlp: return "mlp";
    case BlockKind::resnet: return "resnet";
    case BlockKind::densenet: return "densenet";
    case BlockKind::d2rl: return "d2rl";
  }
  return "?";
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "mlp") return BlockKind::mlp;
  if (s == "resnet") return BlockKind::resnet;
  if (s == "densenet") return BlockKind::densenet;
  if (s == "d2rl") return BlockKind::d2rl;
  throw ConfigError("unknown block kind '" + s + "'");
}

/// Declarative description of a fully-connected block.
struct ConnectivitySpec {
  BlockKind kind = BlockKind::densenet;
  int num_layers = 2;
  int units = 256;
  Activation activation = Activation::swish;
  bool batch_norm = false;
  int input_dim = 1;

  void validate() const {
    if (num_layers < 0) throw ConfigError("num_layers must be >= 0");
    if (units < 1) throw ConfigError("units must be >= 1");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  }

  ConnectivitySpec with_input(int dim) const {
    ConnectivitySpec s = *this;
    s.input_dim = dim;
    return s;
  }

  bool operator==(const ConnectivitySpec&) const = default;
};

inline int output_dim(const ConnectivitySpec& spec) {
  spec.validate();
  if (spec.num_layers == 0) return spec.input_dim;
  if (spec.kind == BlockKind::densenet) return spec.input_dim + spec.num_layers * spec.units;
  return spec.units;
}

/// Input width seen by each layer's dense map.
inline std::vector<int> layer_input_dims(const ConnectivitySpec& spec) {
  spec.validate();
  std::vector<int> dims;
  for (int i = 0; i < spec.num_layers; ++i) {
    switch (spec.kind) {
      case BlockKind::mlp:
      case BlockKind::resnet: dims.push_back(i == 0 ? spec.input_dim : spec.units); break;
      case BlockKind::densenet: dims.push_back(spec.input_dim + i * spec.units); break;
      case BlockKind::d2rl: dims.push_back(i == 0 ? spec.input_dim : spec.units + spec.input_dim); break;
    }
  }
  return dims;
}

/// ResNet blocks whose input width differs from `units` carry a bias-free
/// linear projection on the first skip path.
inline bool needs_projection(const ConnectivitySpec& spec) {
  return spec.kind == BlockKind::resnet && spec.num_layers > 0 && spec.input_dim != spec.units;
}

struct LayerCount {
  long input_units = 0;
  long output_units = 0;
  long parameters = 0;
  bool operator==(const LayerCount&) const = default;
};

struct ParamCountReport {
  std::vector<LayerCount> per_layer;
  std::optional<LayerCount> head;
  long total = 0;
};

/// Exact parameter accounting: dense layers count in·out + out, batch
/// normalisation 4 per unit (γ, β, running mean, running variance), the
/// ResNet projection in·out, and an optional linear head with bias.
inline ParamCountReport count_parameters(const ConnectivitySpec& spec, std::optional<int> head_output_dim = {}) {
  ParamCountReport r;
  const auto dims = layer_input_dims(spec);
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const long in = dims[i], out = spec.units;
    long n = in * out + out;
    if (spec.batch_norm) n += 4 * out;
    if (i == 0 && needs_projection(spec)) n += in * out;
    r.per_layer.push_back({in, out, n});
    r.total += n;
  }
  if (head_output_dim) {
    const long in = output_dim(spec), out = *head_output_dim;
    r.head = LayerCount{in, out, in * out + out};
    r.total += r.head->parameters;
  }
  return r;
}

/// An instantiated connectivity block. Each layer is Dense → BatchNorm
/// (optional) → activation.
///   mlp:      y_i = f_i(y_{i-1})
///   resnet:   y_i = f_i(y_{i-1}) + y_{i-1}   (first skip projected if widths differ)
///   densenet: y_i = f_i([y_0, …, y_{i-1}]), output [y_0, …, y_N]
///   d2rl:     y_1 = f_1(x), y_i = f_i([y_{i-1}, x])
class Block {
 public:
  Block() = default;
  Block(const ConnectivitySpec& spec, const std::string& name, Rng& rng, BatchNormOptions bn = {})
      : spec_(spec), name_(name) {
    spec.validate();
    const auto dims = layer_input_dims(spec);
    layers_.reserve(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const std::string p = name + "/layer" + std::to_string(i);
      Layer l;
      l.dense = DenseLayer(p + "/dense", dims[i], spec.units, rng);
      if (spec.batch_norm) l.bn = BatchNormLayer(p + "/bn", spec.units, bn);
      if (i == 0 && needs_projection(spec))
        l.projection = DenseLayer(p + "/projection", spec.input_dim, spec.units, rng, false, ParamRole::projection);
      layers_.push_back(std::move(l));
    }
  }

  const ConnectivitySpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  int input_dim() const { return spec_.input_dim; }
  int output_dim() const { return widenet::output_dim(spec_); }
  std::size_t num_layers() const { return layers_.size(); }
  DenseLayer& dense(std::size_t i) { return layers_.at(i).dense; }
  const DenseLayer& dense(std::size_t i) const { return layers_.at(i).dense; }
  BatchNormLayer* batch_norm(std::size_t i) { return layers_.at(i).bn ? &*layers_[i].bn : nullptr; }
  DenseLayer* projection() { return !layers_.empty() && layers_[0].projection ? &*layers_[0].projection : nullptr; }

  Var forward(Tape& t, Var x, Mode mode, bool update_stats = true) {
    if (t.value(x).cols() != spec_.input_dim)
      throw ShapeError("block '" + name_ + "': expected " + std::to_string(spec_.input_dim) + " inputs, got " +
                       shape_str(t.value(x)));
    Var cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Var in = cur;
      if (spec_.kind == BlockKind::d2rl && i > 0) in = ops::concat_cols(t, {cur, x});
      Var y = apply(t, layers_[i], in, mode, update_stats);
      switch (spec_.kind) {
        case BlockKind::mlp:
        case BlockKind::d2rl: cur = y; break;
        case BlockKind::densenet: cur = ops::concat_cols(t, {cur, y}); break;
        case BlockKind::resnet: {
          Var skip = layers_[i].projection ? layers_[i].projection->forward(t, cur) : cur;
          cur = ops::add(t, y, skip);
          break;
        }
      }
    }
    return cur;
  }

  /// Forward without gradient recording. Train mode still updates running
  /// statistics; eval mode mutates nothing.
  Matrix forward(const Matrix& x, Mode mode) {
    Tape t(false);
    return t.value(forward(t, t.constant(x), mode));
  }

  void collect(ParamList& out) {
    for (auto& l : layers_) {
      l.dense.collect(out);
      if (l.bn) l.bn->collect(out);
      if (l.projection) l.projection->collect(out);
    }
  }

  ParamList parameters() {
    ParamList out;
    collect(out);
    return out;
  }

 private:
  struct Layer {
    DenseLayer dense;
    std::optional<BatchNormLayer> bn;
    std::optional<DenseLayer> projection;
  };

  Var apply(Tape& t, Layer& l, Var in, Mode mode, bool update_stats) {
    Var h = l.dense.forward(t, in);
    if (l.bn) h = l.bn->forward(t, h, mode, update_stats);
    return ops::activate(t, spec_.activation, h);
  }

  ConnectivitySpec spec_;
  std::string name_;
  std::vector<Layer> layers_;
};

/// Block followed by an optional linear head.
class Network {
 public:
  Network() = default;
  Network(const ConnectivitySpec& spec, std::optional<int> head_dim, const std::string& name, Rng& rng,
          BatchNormOptions bn = {})
      : block_(spec, name + "/block", rng, bn) {
    if (head_dim) head_ = DenseLayer(name + "/head", block_.output_dim(), *head_dim, rng);
  }

  Block& block() { return block_; }
  const Block& block() const { return block_; }
  bool has_head() const { return head_.has_value(); }
  DenseLayer& head() { return *head_; }
  const DenseLayer& head() const { return *head_; }
  int input_dim() const { return block_.input_dim(); }
  int feature_dim() const { return block_.output_dim(); }
  int output_dim() const { return head_ ? static_cast<int>(head_->out_dim()) : block_.output_dim(); }

  Var features(Tape& t, Var x, Mode mode, bool update_stats = true) { return block_.forward(t, x, mode, update_stats); }

  Var forward(Tape& t, Var x, Mode mode, bool update_stats = true) {
    Var f = block_.forward(t, x, mode, update_stats);
    return head_ ? head_->forward(t, f) : f;
  }

  Matrix forward(const Matrix& x, Mode mode) {
    Tape t(false);
    return t.value(forward(t, t.constant(x), mode));
  }

  void collect(ParamList& out) {
    block_.collect(out);
    if (head_) head_->collect(out);
  }

  ParamList parameters() {
    ParamList out;
    collect(out);
    return out;
  }

 private:
  Block block_;
  std::optional<DenseLayer> head_;
};

/// Total stored tensor elements of an instantiated network (trainable and
/// running statistics).
inline long instantiated_parameter_count(Network& net) { return static_cast<long>(total_size(net.parameters())); }

}  // namespace widenet
