#pragma once

#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "widenet/core/parameter.hpp"

namespace widenet {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::size_t id = none;
  bool valid() const { return id != none; }
};

/// Per-network reverse-mode recorder. Each op appends its output node and,
/// when any input requires a gradient, a closure that propagates the
/// output gradient back to its inputs. There is no global graph state.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix v, const char* tag = "const") { return push(std::move(v), false, tag); }

  /// Leaf whose gradient is kept after backward().
  Var input(Matrix v) { return push(std::move(v), record_, "input"); }

  /// Leaf bound to a parameter; backward() accumulates into `p.grad`
  /// unless parameters are currently frozen on this tape.
  Var param(Parameter& p) {
    Node n;
    n.ext = &p.value;
    n.needs_grad = record_ && !frozen_ && p.trainable();
    n.param = n.needs_grad ? &p : nullptr;
    n.tag = "param";
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// While frozen, parameters enter the tape as constants. Gradients still
  /// flow through them to other inputs.
  void freeze_params(bool frozen) { frozen_ = frozen; }
  bool params_frozen() const { return frozen_; }

  const Matrix& value(Var v) const {
    const Node& n = node(v);
    return n.ext ? *n.ext : n.own;
  }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw ShapeError("scalar(): value is " + shape_str(m));
    return m(0, 0);
  }

  bool requires_grad(Var v) const { return node(v).needs_grad; }
  const char* tag(Var v) const { return node(v).tag; }
  std::size_t size() const { return nodes_.size(); }

  const Matrix& grad(Var v) const {
    if (!done_) throw StateError("grad() requested before backward()");
    const Node& n = node(v);
    if (!n.needs_grad) throw StateError("grad() requested for a node that does not require gradients");
    return n.grad;
  }

  /// Runs the recorded closures in reverse from a 1×1 loss node.
  void backward(Var loss) {
    if (!record_) throw StateError("backward() on a tape that does not record");
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size())
      throw StateError("backward() before any forward pass was recorded");
    if (done_) throw StateError("backward() called twice on the same tape");
    if (value(loss).size() != 1) throw ShapeError("backward(): loss must be scalar, got " + shape_str(value(loss)));
    done_ = true;
    if (!node(loss).needs_grad) return;
    grad_ref(loss).setOnes();
    for (auto it = backward_ops_.rbegin(); it != backward_ops_.rend(); ++it) (*it)();
    for (auto& n : nodes_) {
      if (n.param && n.grad.size() > 0) n.param->grad += n.grad;
    }
  }

  // -- op-author interface --

  Var push(Matrix v, bool needs_grad, const char* tag) {
    Node n;
    n.own = std::move(v);
    n.needs_grad = record_ && needs_grad;
    n.tag = tag;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  void on_backward(std::function<void()> fn) { backward_ops_.push_back(std::move(fn)); }

  /// Gradient buffer of `v`, zero-initialised on first access.
  Matrix& grad_ref(Var v) {
    Node& n = node(v);
    if (n.grad.size() == 0) {
      const Matrix& val = n.ext ? *n.ext : n.own;
      n.grad = Matrix::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  /// Gradient of an op output during backward; zeros if nothing flowed in.
  const Matrix& out_grad(Var v) { return grad_ref(v); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    const char* tag = "";
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("invalid tape variable");
    return nodes_[v.id];
  }
  Node& node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("invalid tape variable");
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;
  std::vector<std::function<void()>> backward_ops_;
  bool record_;
  bool frozen_ = false;
  bool done_ = false;
};

/// Scoped parameter freezing.
class FrozenParams {
 public:
  explicit FrozenParams(Tape& tape, bool freeze = true) : tape_(tape), prev_(tape.params_frozen()) {
    tape_.freeze_params(freeze);
  }
  ~FrozenParams() { tape_.freeze_params(prev_); }
  FrozenParams(const FrozenParams&) = delete;
  FrozenParams& operator=(const FrozenParams&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

}  // namespace widenet
