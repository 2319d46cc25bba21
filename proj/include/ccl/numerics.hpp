#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccl/error.hpp"

namespace ccl {

// Dense row-major matrix of doubles. Rows are the unit of work everywhere in
// the engine: one row per sample, embedding, or queue entry.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error("matrix data length does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw Error("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw Error("dimension mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Selects rows by index, in the given order.
inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(m.row(idx[i]).begin(), m.cols(), out.row(i).begin());
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

// a (n×k) · b (k×m)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error("dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

inline Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double n = norm(m.row(i));
    if (!(n >= 1e-12)) throw Error("degenerate embedding");
    for (double& x : out.row(i)) x /= n;
  }
  return out;
}

// Row-wise exp(m/tau) normalised to sum one, with the row max subtracted first.
inline Matrix softmax_rows(const Matrix& m, double tau) {
  if (!(tau > 0.0)) throw Error("invalid temperature");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - mx) / tau);
      s += o[j];
    }
    for (double& x : o) x /= s;
  }
  return out;
}

// Pairwise dot products between the rows of a and the rows of b.
inline Matrix similarity_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error("dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

// Mean over rows of sum_j -target[i][j] * log(pred[i][j]). Multiply by the row
// count for the plain double sum.
inline double row_cross_entropy(const Matrix& p_target, const Matrix& p_pred) {
  if (p_target.rows() != p_pred.rows() || p_target.cols() != p_pred.cols())
    throw Error("dimension mismatch");
  if (p_pred.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p_pred.rows(); ++i) {
    for (std::size_t j = 0; j < p_pred.cols(); ++j) {
      const double p = p_pred(i, j);
      if (!(p > 1e-300)) throw Error("log underflow");
      total -= p_target(i, j) * std::log(p);
    }
  }
  return total / static_cast<double>(p_pred.rows());
}

// Sum over columns of the population variance of that column.
inline double sum_dim_variance(const Matrix& vectors) {
  if (vectors.rows() < 2) throw Error("need at least two views");
  const auto n = static_cast<double>(vectors.rows());
  double total = 0.0;
  for (std::size_t d = 0; d < vectors.cols(); ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < vectors.rows(); ++i) mean += vectors(i, d);
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < vectors.rows(); ++i) {
      const double e = vectors(i, d) - mean;
      ss += e * e;
    }
    total += ss / n;
  }
  return total;
}

using Objective = std::function<double(const Matrix&)>;

// Central-difference gradient of f at x. Used as the oracle for every
// hand-derived backward pass.
inline Matrix finite_diff_grad(const Objective& f, const Matrix& x, double eps) {
  if (!(eps > 0.0)) throw Error("invalid step size");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double fp = f(probe);
    probe.data()[i] = orig - eps;
    const double fm = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw Error("objective not finite");
    grad.data()[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||), zero when both vanish. The comparison used by
// the gradient checks.
inline double relative_error(const Matrix& a, const Matrix& b) {
  if (a.size() != b.size()) throw Error("dimension mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom < 1e-300) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace ccl
