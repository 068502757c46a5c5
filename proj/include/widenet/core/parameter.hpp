#pragma once

#include <span>
#include <string>
#include <vector>

#include "widenet/core/tensor.hpp"

namespace widenet {

enum class ParamRole {
  weight,
  bias,
  projection,
  bn_gamma,
  bn_beta,
  bn_running_mean,
  bn_running_var,
  scalar,
};

inline bool is_trainable(ParamRole role) {
  return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var;
}

/// A named tensor owned by a network. Running statistics are stored as
/// non-trainable parameters so that checkpoints, snapshots and Polyak
/// averaging see the full network state.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  ParamRole role = ParamRole::weight;

  Parameter() = default;
  Parameter(std::string n, Matrix v, ParamRole r = ParamRole::weight)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), role(r) {}

  bool trainable() const { return is_trainable(role); }
  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamList = std::vector<Parameter*>;

inline ParamList trainable_only(const ParamList& all) {
  ParamList out;
  for (auto* p : all)
    if (p->trainable()) out.push_back(p);
  return out;
}

inline void zero_grads(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

inline Index total_size(std::span<Parameter* const> params) {
  Index n = 0;
  for (auto* p : params) n += p->size();
  return n;
}

inline std::vector<double> flatten(std::span<Parameter* const> params) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(total_size(params)));
  for (auto* p : params) flat.insert(flat.end(), p->value.data(), p->value.data() + p->size());
  return flat;
}

inline void unflatten(std::span<Parameter* const> params, std::span<const double> flat) {
  if (static_cast<Index>(flat.size()) != total_size(params))
    throw ShapeError("unflatten: expected " + std::to_string(total_size(params)) + " values, got " +
                     std::to_string(flat.size()));
  std::size_t off = 0;
  for (auto* p : params) {
    std::copy_n(flat.data() + off, p->size(), p->value.data());
    off += static_cast<std::size_t>(p->size());
  }
}

}  // namespace widenet
