#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace widenet {

/// Row-major 64-bit matrix; every tensor in the library is two-dimensional
/// (vectors are 1×n rows, scalars 1×1).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DegenerateBatchError : Error {
  using Error::Error;
};
struct InvalidArgument : Error {
  using Error::Error;
};

inline std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

inline void require_cols(const Matrix& m, Index cols, const char* what) {
  if (m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) +
                     " columns, got " + shape_str(m));
  }
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(what + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix gaussian(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix uniform(Index rows, Index cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// Stacks rows of `m` selected by `rows`.
template <typename IndexRange>
Matrix gather_rows(const Matrix& m, const IndexRange& rows) {
  Matrix out(static_cast<Index>(std::size(rows)), m.cols());
  Index r = 0;
  for (auto i : rows) out.row(r++) = m.row(static_cast<Index>(i));
  return out;
}

inline Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("hcat: row mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

}  // namespace widenet
