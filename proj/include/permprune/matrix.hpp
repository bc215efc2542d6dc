#pragma once
// Dense row-major matrices and hard channel permutations.
//
// Permutation convention used throughout the library:
//   PermIndex stores map[j] = source index that lands at destination j.
//   perm_to_matrix(p) builds P with P[j][map[j]] = 1, so P*M gathers row
//   map[j] of M into row j, and M*P^T gathers column map[j] into column j.
//   Input-channel permutation of a weight W (d_out x d_in) is therefore a
//   column gather; output-channel permutation is a row gather.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace permprune {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double init = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, init) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(rows_, cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& raw() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool is_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const { return shape_str(rows_, cols_); }
  static std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  if (!out.is_finite()) throw std::runtime_error("matmul: non-finite result");
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("hadamard: shape mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Matrix scaled(const Matrix& a, double s) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add: shape mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("sub: shape mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

inline double frobenius_sq(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
  return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shape mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

// A hard permutation as an index vector: map[j] = source occupying destination j.
struct PermIndex {
  std::vector<std::size_t> map;

  PermIndex() = default;
  explicit PermIndex(std::vector<std::size_t> m) : map(std::move(m)) {}

  static PermIndex identity(std::size_t n) {
    PermIndex p;
    p.map.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.map[i] = i;
    return p;
  }

  std::size_t size() const { return map.size(); }

  bool is_valid() const {
    std::vector<std::uint8_t> seen(map.size(), 0);
    for (std::size_t s : map) {
      if (s >= map.size() || seen[s]) return false;
      seen[s] = 1;
    }
    return true;
  }

  void validate() const {
    if (!is_valid()) throw std::invalid_argument("PermIndex: map is not a bijection");
  }

  bool is_identity() const {
    for (std::size_t j = 0; j < map.size(); ++j)
      if (map[j] != j) return false;
    return true;
  }

  bool operator==(const PermIndex& o) const { return map == o.map; }
};

inline Matrix perm_to_matrix(const PermIndex& p) {
  p.validate();
  Matrix m(p.size(), p.size());
  for (std::size_t j = 0; j < p.size(); ++j) m(j, p.map[j]) = 1.0;
  return m;
}

inline PermIndex perm_invert(const PermIndex& p) {
  p.validate();
  PermIndex q;
  q.map.resize(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) q.map[p.map[j]] = j;
  return q;
}

// compose(a, b): apply b first, then a. (compose(p, invert(p)) is the identity.)
inline PermIndex perm_compose(const PermIndex& a, const PermIndex& b) {
  if (a.size() != b.size()) throw std::invalid_argument("perm_compose: size mismatch");
  PermIndex c;
  c.map.resize(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) c.map[j] = b.map[a.map[j]];
  return c;
}

// P * m without materializing P: out row j = in row map[j].
inline Matrix perm_apply_rows(const PermIndex& p, const Matrix& m) {
  if (p.size() != m.rows()) {
    throw std::invalid_argument("perm_apply_rows: permutation length " +
                                std::to_string(p.size()) + " vs matrix " + m.shape_str());
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t j = 0; j < m.rows(); ++j)
    for (std::size_t c = 0; c < m.cols(); ++c) out(j, c) = m(p.map[j], c);
  return out;
}

// m * P^T without materializing P: out col j = in col map[j].
inline Matrix perm_apply_cols(const PermIndex& p, const Matrix& m) {
  if (p.size() != m.cols()) {
    throw std::invalid_argument("perm_apply_cols: permutation length " +
                                std::to_string(p.size()) + " vs matrix " + m.shape_str());
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < m.cols(); ++j) out(r, j) = m(r, p.map[j]);
  return out;
}

inline std::vector<double> perm_apply_vector(const PermIndex& p, const std::vector<double>& v) {
  if (p.size() != v.size()) {
    throw std::invalid_argument("perm_apply_vector: permutation length " +
                                std::to_string(p.size()) + " vs vector length " +
                                std::to_string(v.size()));
  }
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[p.map[j]];
  return out;
}

}  // namespace permprune
