#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nmrom/error.hpp"

namespace nmrom {

/// Square sparse matrix in compressed-row form. Rows are appended in order;
/// within a row, entries keep insertion order with duplicates summed.
class SparseOperator {
 public:
  SparseOperator() = default;
  explicit SparseOperator(std::size_t dim) : dim_(dim) {
    row_ptr_.reserve(dim + 1);
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t nonzeros() const noexcept { return values_.size(); }
  [[nodiscard]] std::size_t rows_done() const noexcept { return row_ptr_.size() - 1; }

  void add(std::size_t col, double value) {
    if (col >= dim_) throw ShapeError("sparse column " + std::to_string(col) + " out of range");
    for (std::size_t k = row_ptr_.back(); k < cols_.size(); ++k) {
      if (cols_[k] == col) {
        values_[k] += value;
        return;
      }
    }
    cols_.push_back(col);
    values_.push_back(value);
  }

  void finish_row() {
    if (rows_done() >= dim_) throw ShapeError("too many sparse rows");
    row_ptr_.push_back(cols_.size());
  }

  [[nodiscard]] bool complete() const noexcept { return rows_done() == dim_; }

  [[nodiscard]] std::span<const std::size_t> row_cols(std::size_t r) const {
    return {cols_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  [[nodiscard]] std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  [[nodiscard]] double coeff(std::size_t r, std::size_t c) const {
    auto cols = row_cols(r);
    auto vals = row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k)
      if (cols[k] == c) return vals[k];
    return 0.0;
  }

  [[nodiscard]] double diagonal(std::size_t r) const { return coeff(r, r); }

  void multiply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t r = 0; r < dim_; ++r) {
      double s = 0.0;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += values_[k] * x[cols_[k]];
      y[r] = s;
    }
  }

  [[nodiscard]] std::vector<double> operator*(std::span<const double> x) const {
    if (x.size() != dim_) throw ShapeError("sparse matvec dimension mismatch");
    std::vector<double> y(dim_);
    multiply(x, y);
    return y;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> cols_;
  std::vector<double> values_;
};

enum class SolverMethod { bicgstab, conjugate_gradient, gauss_seidel };

struct LinearSolverConfig {
  SolverMethod method = SolverMethod::bicgstab;
  double abs_tol = 1e-12;
  double rel_tol = 1e-14;
  int max_iters = 0;  // 0 selects 10 * dim
};

struct SolveStats {
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double true_residual(const SparseOperator& A, std::span<const double> x, std::span<const double> b,
                            std::vector<double>& r) {
  A.multiply(x, r);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  return norm2(r);
}

inline std::vector<double> inverse_diagonal(const SparseOperator& A) {
  std::vector<double> inv(A.dim());
  for (std::size_t i = 0; i < A.dim(); ++i) {
    const double d = A.diagonal(i);
    inv[i] = d != 0.0 ? 1.0 / d : 1.0;
  }
  return inv;
}

// Jacobi-preconditioned BiCGStab.
inline SolveStats bicgstab(const SparseOperator& A, std::span<const double> b, std::vector<double>& x, double tol,
                           int max_iters) {
  const std::size_t n = A.dim();
  const auto inv_d = inverse_diagonal(A);
  std::vector<double> r(n), r_hat(n), p(n, 0.0), v(n, 0.0), s(n), t(n), p_hat(n), s_hat(n);
  double res = true_residual(A, x, b, r);
  if (res <= tol) return {0, res};
  r_hat = r;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 1; it <= max_iters; ++it) {
    const double rho_new = dot(r_hat, r);
    if (rho_new == 0.0) {
      // Breakdown: restart the shadow residual from the current one.
      r_hat = r;
      std::fill(p.begin(), p.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      rho = alpha = omega = 1.0;
      continue;
    }
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    for (std::size_t i = 0; i < n; ++i) p_hat[i] = inv_d[i] * p[i];
    A.multiply(p_hat, v);
    const double rv = dot(r_hat, v);
    alpha = rv != 0.0 ? rho / rv : 0.0;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2(s) <= tol) {
      for (std::size_t i = 0; i < n; ++i) x[i] += alpha * p_hat[i];
      res = true_residual(A, x, b, r);
      if (res <= tol) return {it, res};
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) s_hat[i] = inv_d[i] * s[i];
    A.multiply(s_hat, t);
    const double tt = dot(t, t);
    omega = tt != 0.0 ? dot(t, s) / tt : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p_hat[i] + omega * s_hat[i];
      r[i] = s[i] - omega * t[i];
    }
    if (norm2(r) <= tol) {
      res = true_residual(A, x, b, r);
      if (res <= tol) return {it, res};
    }
    if (omega == 0.0) omega = 1.0;
  }
  res = true_residual(A, x, b, r);
  if (res <= tol) return {max_iters, res};
  throw SolverError("bicgstab did not converge", max_iters, res);
}

// Jacobi-preconditioned conjugate gradients (symmetric positive definite A).
inline SolveStats conjugate_gradient(const SparseOperator& A, std::span<const double> b, std::vector<double>& x,
                                     double tol, int max_iters) {
  const std::size_t n = A.dim();
  const auto inv_d = inverse_diagonal(A);
  std::vector<double> r(n), z(n), p(n), q(n);
  double res = true_residual(A, x, b, r);
  if (res <= tol) return {0, res};
  for (std::size_t i = 0; i < n; ++i) z[i] = inv_d[i] * r[i];
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= max_iters; ++it) {
    A.multiply(p, q);
    const double pq = dot(p, q);
    if (pq == 0.0) break;
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    if (norm2(r) <= tol) {
      res = true_residual(A, x, b, r);
      if (res <= tol) return {it, res};
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_d[i] * r[i];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  res = true_residual(A, x, b, r);
  if (res <= tol) return {max_iters, res};
  throw SolverError("conjugate gradient did not converge", max_iters, res);
}

inline SolveStats gauss_seidel(const SparseOperator& A, std::span<const double> b, std::vector<double>& x, double tol,
                               int max_iters) {
  const std::size_t n = A.dim();
  std::vector<double> r(n);
  double res = true_residual(A, x, b, r);
  if (res <= tol) return {0, res};
  for (int it = 1; it <= max_iters; ++it) {
    for (std::size_t row = 0; row < n; ++row) {
      auto cols = A.row_cols(row);
      auto vals = A.row_values(row);
      double diag = 0.0, s = b[row];
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] == row)
          diag += vals[k];
        else
          s -= vals[k] * x[cols[k]];
      }
      if (diag == 0.0) throw NumericError("gauss-seidel: zero diagonal in row " + std::to_string(row));
      x[row] = s / diag;
    }
    res = true_residual(A, x, b, r);
    if (res <= tol) return {it, res};
  }
  throw SolverError("gauss-seidel did not converge", max_iters, res);
}

}  // namespace detail

/// Solves A x = b until ||A x - b|| <= max(abs_tol, rel_tol ||b||).
/// `x` holds the initial guess on entry (resized to zeros if empty).
inline SolveStats solve_sparse(const SparseOperator& A, std::span<const double> b, std::vector<double>& x,
                               const LinearSolverConfig& cfg = {}) {
  if (!A.complete()) throw ShapeError("sparse operator not fully assembled");
  if (b.size() != A.dim()) throw ShapeError("rhs length does not match operator");
  if (!(cfg.abs_tol > 0.0) || !(cfg.rel_tol > 0.0)) throw ConfigError("solver tolerances must be positive");
  if (x.size() != A.dim()) x.assign(A.dim(), 0.0);
  const double tol = std::max(cfg.abs_tol, cfg.rel_tol * detail::norm2(b));
  const int max_iters = cfg.max_iters > 0 ? cfg.max_iters : static_cast<int>(10 * A.dim());
  switch (cfg.method) {
    case SolverMethod::bicgstab:
      return detail::bicgstab(A, b, x, tol, max_iters);
    case SolverMethod::conjugate_gradient:
      return detail::conjugate_gradient(A, b, x, tol, max_iters);
    case SolverMethod::gauss_seidel:
      return detail::gauss_seidel(A, b, x, tol, max_iters);
  }
  return {};
}

inline std::vector<double> solve_sparse(const SparseOperator& A, std::span<const double> b,
                                        const LinearSolverConfig& cfg = {}) {
  std::vector<double> x;
  solve_sparse(A, b, x, cfg);
  return x;
}

}  // namespace nmrom
