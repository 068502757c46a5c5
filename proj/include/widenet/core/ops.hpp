#pragma once

#include <string>
#include <vector>

#include "widenet/core/tape.hpp"

namespace widenet {

enum class Activation { relu, swish, tanh, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::swish: return "swish";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "swish") return Activation::swish;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Elementwise activation without recording.
inline Matrix activation(Activation kind, const Matrix& x) {
  switch (kind) {
    case Activation::relu: return x.cwiseMax(0.0);
    case Activation::swish: return x.unaryExpr([](double v) { return v * sigmoid(v); });
    case Activation::tanh: return x.array().tanh().matrix();
    case Activation::identity: return x;
  }
  return x;
}

/// d activation / dx evaluated at x (with y = activation(x)).
inline Matrix activation_derivative(Activation kind, const Matrix& x, const Matrix& y) {
  switch (kind) {
    case Activation::relu: return x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::swish:
      return x.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
    case Activation::tanh: return (1.0 - y.array().square()).matrix();
    case Activation::identity: return Matrix::Ones(x.rows(), x.cols());
  }
  return Matrix::Ones(x.rows(), x.cols());
}

namespace ops {

namespace detail {

inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (auto v : vs)
    if (v.valid() && t.requires_grad(v)) return true;
  return false;
}

/// Elementwise unary op. `deriv(x, y)` returns dy/dx elementwise.
template <typename Fwd, typename Deriv>
Var unary(Tape& t, Var a, const char* tag, Fwd fwd, Deriv deriv) {
  Matrix y = fwd(t.value(a));
  const bool ng = t.requires_grad(a);
  Var out = t.push(std::move(y), ng, tag);
  if (ng) {
    t.on_backward([&t, a, out, deriv] {
      const Matrix d = deriv(t.value(a), t.value(out));
      t.grad_ref(a).array() += t.out_grad(out).array() * d.array();
    });
  }
  return out;
}

}  // namespace detail

/// y = x·W + b, with b a 1×out row (or absent).
inline Var affine(Tape& t, Var x, Var w, Var b = {}) {
  const Matrix& X = t.value(x);
  const Matrix& W = t.value(w);
  if (X.cols() != W.rows())
    throw ShapeError("affine: input " + shape_str(X) + " does not match weight " + shape_str(W));
  Matrix Y = X * W;
  if (b.valid()) {
    const Matrix& B = t.value(b);
    if (B.rows() != 1 || B.cols() != W.cols()) throw ShapeError("affine: bias " + shape_str(B));
    Y.rowwise() += B.row(0);
  }
  const bool ng = detail::any_grad(t, {x, w, b});
  Var out = t.push(std::move(Y), ng, "affine");
  if (ng) {
    t.on_backward([&t, x, w, b, out] {
      const Matrix& G = t.out_grad(out);
      if (t.requires_grad(x)) t.grad_ref(x).noalias() += G * t.value(w).transpose();
      if (t.requires_grad(w)) t.grad_ref(w).noalias() += t.value(x).transpose() * G;
      if (b.valid() && t.requires_grad(b)) t.grad_ref(b) += G.colwise().sum();
    });
  }
  return out;
}

inline Var activate(Tape& t, Activation kind, Var a) {
  const char* tag = kind == Activation::relu ? "relu" : kind == Activation::swish ? "swish" : kind == Activation::tanh ? "tanh" : "identity";
  return detail::unary(
      t, a, tag, [kind](const Matrix& x) { return activation(kind, x); },
      [kind](const Matrix& x, const Matrix& y) { return activation_derivative(kind, x, y); });
}

/// Train-mode batch normalisation over rows. Writes the batch mean and
/// biased batch variance to the optional outputs.
inline Var batchnorm_train(Tape& t, Var x, Var gamma, Var beta, double eps, Matrix* batch_mean = nullptr,
                           Matrix* batch_var = nullptr) {
  const Matrix& X = t.value(x);
  const Index n = X.rows();
  if (n < 2) throw DegenerateBatchError("batch normalisation in train mode needs at least 2 rows, got " + std::to_string(n));
  const Matrix mu = X.colwise().mean();
  Matrix centered = X.rowwise() - mu.row(0);
  const Matrix var = centered.array().square().colwise().mean().matrix();
  const Matrix inv = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = centered.array().rowwise() * inv.row(0).array();
  const Matrix& G = t.value(gamma);
  const Matrix& B = t.value(beta);
  Matrix Y = (xhat.array().rowwise() * G.row(0).array()).matrix();
  Y.rowwise() += B.row(0);
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  const bool ng = detail::any_grad(t, {x, gamma, beta});
  Var out = t.push(std::move(Y), ng, "batchnorm");
  if (ng) {
    t.on_backward([&t, x, gamma, beta, out, xhat = std::move(xhat), inv] {
      const Matrix& Gy = t.out_grad(out);
      if (t.requires_grad(gamma)) t.grad_ref(gamma) += (Gy.array() * xhat.array()).colwise().sum().matrix();
      if (t.requires_grad(beta)) t.grad_ref(beta) += Gy.colwise().sum();
      if (t.requires_grad(x)) {
        const double nn = static_cast<double>(xhat.rows());
        const Matrix dxhat = (Gy.array().rowwise() * t.value(gamma).row(0).array()).matrix();
        const Matrix sum_d = dxhat.colwise().sum();
        const Matrix sum_dx = (dxhat.array() * xhat.array()).colwise().sum().matrix();
        Matrix dx = (nn * dxhat).rowwise() - sum_d.row(0);
        dx -= (xhat.array().rowwise() * sum_dx.row(0).array()).matrix();
        dx = (dx.array().rowwise() * (inv.row(0).array() / nn)).matrix();
        t.grad_ref(x) += dx;
      }
    });
  }
  return out;
}

/// Eval-mode batch normalisation with fixed statistics.
inline Var batchnorm_eval(Tape& t, Var x, Var gamma, Var beta, const Matrix& mean, const Matrix& var, double eps) {
  const Matrix& X = t.value(x);
  const Matrix inv = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = (X.rowwise() - mean.row(0)).array().rowwise() * inv.row(0).array();
  Matrix Y = (xhat.array().rowwise() * t.value(gamma).row(0).array()).matrix();
  Y.rowwise() += t.value(beta).row(0);
  const bool ng = detail::any_grad(t, {x, gamma, beta});
  Var out = t.push(std::move(Y), ng, "batchnorm");
  if (ng) {
    t.on_backward([&t, x, gamma, beta, out, xhat = std::move(xhat), inv] {
      const Matrix& Gy = t.out_grad(out);
      if (t.requires_grad(gamma)) t.grad_ref(gamma) += (Gy.array() * xhat.array()).colwise().sum().matrix();
      if (t.requires_grad(beta)) t.grad_ref(beta) += Gy.colwise().sum();
      if (t.requires_grad(x))
        t.grad_ref(x).array() += Gy.array().rowwise() * (t.value(gamma).row(0).array() * inv.row(0).array());
    });
  }
  return out;
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = t.value(parts.front()).rows();
  Index cols = 0;
  bool ng = false;
  for (auto p : parts) {
    if (t.value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += t.value(p).cols();
    ng = ng || t.requires_grad(p);
  }
  Matrix Y(rows, cols);
  Index off = 0;
  for (auto p : parts) {
    const Matrix& v = t.value(p);
    Y.middleCols(off, v.cols()) = v;
    off += v.cols();
  }
  Var out = t.push(std::move(Y), ng, "concat");
  if (ng) {
    t.on_backward([&t, parts, out] {
      const Matrix& G = t.out_grad(out);
      Index o = 0;
      for (auto p : parts) {
        const Index c = t.value(p).cols();
        if (t.requires_grad(p)) t.grad_ref(p) += G.middleCols(o, c);
        o += c;
      }
    });
  }
  return out;
}

inline Var slice_cols(Tape& t, Var a, Index start, Index count) {
  const Matrix& A = t.value(a);
  if (start < 0 || count < 0 || start + count > A.cols()) throw ShapeError("slice_cols: out of range on " + shape_str(A));
  Matrix Y = A.middleCols(start, count);
  const bool ng = t.requires_grad(a);
  Var out = t.push(std::move(Y), ng, "slice");
  if (ng) t.on_backward([&t, a, out, start, count] { t.grad_ref(a).middleCols(start, count) += t.out_grad(out); });
  return out;
}

inline Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Matrix Y = t.value(a) + t.value(b);
  const bool ng = detail::any_grad(t, {a, b});
  Var out = t.push(std::move(Y), ng, "add");
  if (ng) {
    t.on_backward([&t, a, b, out] {
      const Matrix& G = t.out_grad(out);
      if (t.requires_grad(a)) t.grad_ref(a) += G;
      if (t.requires_grad(b)) t.grad_ref(b) += G;
    });
  }
  return out;
}

inline Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Matrix Y = t.value(a) - t.value(b);
  const bool ng = detail::any_grad(t, {a, b});
  Var out = t.push(std::move(Y), ng, "sub");
  if (ng) {
    t.on_backward([&t, a, b, out] {
      const Matrix& G = t.out_grad(out);
      if (t.requires_grad(a)) t.grad_ref(a) += G;
      if (t.requires_grad(b)) t.grad_ref(b) -= G;
    });
  }
  return out;
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Matrix Y = t.value(a).cwiseProduct(t.value(b));
  const bool ng = detail::any_grad(t, {a, b});
  Var out = t.push(std::move(Y), ng, "mul");
  if (ng) {
    t.on_backward([&t, a, b, out] {
      const Matrix& G = t.out_grad(out);
      if (t.requires_grad(a)) t.grad_ref(a) += G.cwiseProduct(t.value(b));
      if (t.requires_grad(b)) t.grad_ref(b) += G.cwiseProduct(t.value(a));
    });
  }
  return out;
}

inline Var mul_const(Tape& t, Var a, const Matrix& c) {
  require_same_shape(t.value(a), c, "mul_const");
  return detail::unary(
      t, a, "mul_const", [&c](const Matrix& x) { return Matrix(x.cwiseProduct(c)); },
      [c](const Matrix&, const Matrix&) { return c; });
}

inline Var add_const(Tape& t, Var a, const Matrix& c) {
  require_same_shape(t.value(a), c, "add_const");
  return detail::unary(
      t, a, "add_const", [&c](const Matrix& x) { return Matrix(x + c); },
      [](const Matrix& x, const Matrix&) { return Matrix::Ones(x.rows(), x.cols()); });
}

inline Var scale(Tape& t, Var a, double c) {
  return detail::unary(
      t, a, "scale", [c](const Matrix& x) { return Matrix(c * x); },
      [c](const Matrix& x, const Matrix&) { return Matrix::Constant(x.rows(), x.cols(), c); });
}

inline Var add_scalar(Tape& t, Var a, double c) {
  return detail::unary(
      t, a, "add_scalar", [c](const Matrix& x) { return Matrix(x.array() + c); },
      [](const Matrix& x, const Matrix&) { return Matrix::Ones(x.rows(), x.cols()); });
}

inline Var exp(Tape& t, Var a) {
  return detail::unary(
      t, a, "exp", [](const Matrix& x) { return Matrix(x.array().exp()); },
      [](const Matrix&, const Matrix& y) { return y; });
}

inline Var log(Tape& t, Var a) {
  return detail::unary(
      t, a, "log", [](const Matrix& x) { return Matrix(x.array().log()); },
      [](const Matrix& x, const Matrix&) { return Matrix(x.array().inverse()); });
}

inline Var square(Tape& t, Var a) {
  return detail::unary(
      t, a, "square", [](const Matrix& x) { return Matrix(x.array().square()); },
      [](const Matrix& x, const Matrix&) { return Matrix(2.0 * x); });
}

inline Var tanh(Tape& t, Var a) { return activate(t, Activation::tanh, a); }

/// Clamp with zero gradient outside (lo, hi).
inline Var clamp(Tape& t, Var a, double lo, double hi) {
  return detail::unary(
      t, a, "clamp", [lo, hi](const Matrix& x) { return Matrix(x.cwiseMax(lo).cwiseMin(hi)); },
      [lo, hi](const Matrix& x, const Matrix&) {
        return Matrix(x.unaryExpr([lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; }));
      });
}

/// Elementwise minimum; ties route the gradient to `a`.
inline Var minimum(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "minimum");
  Matrix Y = t.value(a).cwiseMin(t.value(b));
  const bool ng = detail::any_grad(t, {a, b});
  Var out = t.push(std::move(Y), ng, "minimum");
  if (ng) {
    t.on_backward([&t, a, b, out] {
      const Matrix& G = t.out_grad(out);
      const Matrix& A = t.value(a);
      const Matrix& B = t.value(b);
      for (Index i = 0; i < G.size(); ++i) {
        const bool pick_a = A.data()[i] <= B.data()[i];
        if (pick_a && t.requires_grad(a)) t.grad_ref(a).data()[i] += G.data()[i];
        if (!pick_a && t.requires_grad(b)) t.grad_ref(b).data()[i] += G.data()[i];
      }
    });
  }
  return out;
}

/// Row sums: n×m → n×1.
inline Var sum_cols(Tape& t, Var a) {
  Matrix Y = t.value(a).rowwise().sum();
  const bool ng = t.requires_grad(a);
  Var out = t.push(std::move(Y), ng, "sum_cols");
  if (ng) t.on_backward([&t, a, out] { t.grad_ref(a).colwise() += t.out_grad(out).col(0); });
  return out;
}

inline Var sum(Tape& t, Var a) {
  Matrix Y(1, 1);
  Y(0, 0) = t.value(a).sum();
  const bool ng = t.requires_grad(a);
  Var out = t.push(std::move(Y), ng, "sum");
  if (ng) t.on_backward([&t, a, out] { t.grad_ref(a).array() += t.out_grad(out)(0, 0); });
  return out;
}

inline Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(t, sum(t, a), 1.0 / n);
}

/// Elementwise Huber: 0.5x² for |x| ≤ δ, δ(|x| − 0.5δ) otherwise.
inline Var huber(Tape& t, Var a, double delta) {
  return detail::unary(
      t, a, "huber",
      [delta](const Matrix& x) {
        return Matrix(x.unaryExpr([delta](double v) {
          const double av = std::abs(v);
          return av <= delta ? 0.5 * v * v : delta * (av - 0.5 * delta);
        }));
      },
      [delta](const Matrix& x, const Matrix&) {
        return Matrix(x.unaryExpr([delta](double v) { return std::abs(v) <= delta ? v : (v > 0 ? delta : -delta); }));
      });
}

}  // namespace ops
}  // namespace widenet
