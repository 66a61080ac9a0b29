#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/linalg/dense.hpp"

namespace nmrom {

struct LMConfig {
  int max_residual_evals = 7;  // includes the finite-difference Jacobian probes
  double lambda0 = 1e-3;
  double fd_step = 1e-5;
  double gradient_tol = std::numeric_limits<double>::epsilon();
  double step_tol = std::numeric_limits<double>::epsilon();
  double residual_tol = std::numeric_limits<double>::epsilon();

  void validate() const {
    if (max_residual_evals < 2) throw ConfigError("LM needs at least 2 residual evaluations");
    if (!(fd_step > 0.0)) throw ConfigError("LM finite-difference step must be positive");
    if (!(lambda0 > 0.0)) throw ConfigError("LM initial damping must be positive");
  }
};

enum class LMStatus { budget_exhausted, converged_residual, converged_gradient, converged_step, aborted_non_finite };

struct LMResult {
  Vector z;
  double residual_norm = 0.0;
  double initial_residual_norm = 0.0;
  int evaluations = 0;
  int iterations = 0;
  LMStatus status = LMStatus::budget_exhausted;
  std::vector<double> accepted_norms;  // residual norm of z0 followed by every accepted iterate

  [[nodiscard]] bool aborted() const noexcept { return status == LMStatus::aborted_non_finite; }
};

namespace detail {
inline bool finite(const Vector& v) { return v.allFinite(); }
}  // namespace detail

/// Levenberg-Marquardt with forward-difference Jacobians and a hard budget
/// on residual evaluations.
///
/// Each iteration solves (J^T J + lambda diag(J^T J)) delta = -J^T r and tries
/// the step lengths 1, 1/2, 1/4 until the residual norm decreases. Damping is
/// divided by 3 on acceptance and doubled on rejection. A rejected step reuses
/// the current Jacobian. The returned iterate never has a larger residual norm
/// than `z0`.
template <class ResidualFn>
LMResult levenberg_marquardt(ResidualFn&& residual, const Vector& z0, const LMConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = z0.size();
  LMResult out;
  out.z = z0;

  auto eval = [&](const Vector& z, Vector& r) {
    ++out.evaluations;
    try {
      r = residual(z);
    } catch (const DomainError&) {
      return false;
    }
    return detail::finite(r);
  };

  Vector r;
  if (!eval(out.z, r)) {
    out.status = LMStatus::aborted_non_finite;
    out.residual_norm = out.initial_residual_norm = std::numeric_limits<double>::infinity();
    return out;
  }
  double f = r.norm();
  out.initial_residual_norm = out.residual_norm = f;
  out.accepted_norms.push_back(f);
  if (f <= cfg.residual_tol) {
    out.status = LMStatus::converged_residual;
    return out;
  }

  double lambda = cfg.lambda0;
  Matrix J(r.size(), n);
  Matrix JtJ;
  Vector g;
  bool have_jacobian = false;
  Vector probe, r_probe;
  static constexpr std::array<double, 3> kStepLengths{1.0, 0.5, 0.25};

  while (true) {
    if (!have_jacobian) {
      if (out.evaluations + n > cfg.max_residual_evals) break;
      for (Eigen::Index i = 0; i < n; ++i) {
        probe = out.z;
        probe[i] += cfg.fd_step;
        if (!eval(probe, r_probe)) {
          out.status = LMStatus::aborted_non_finite;
          return out;
        }
        J.col(i) = (r_probe - r) / cfg.fd_step;
      }
      JtJ = J.transpose() * J;
      g = J.transpose() * r;
      have_jacobian = true;
      if (g.lpNorm<Eigen::Infinity>() <= cfg.gradient_tol) {
        out.status = LMStatus::converged_gradient;
        return out;
      }
    }

    Matrix A = JtJ;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = JtJ(i, i) > 0.0 ? JtJ(i, i) : 1.0;
      A(i, i) += lambda * d;
    }
    const Vector delta = A.ldlt().solve(-g);
    ++out.iterations;
    if (!delta.allFinite()) {
      out.status = LMStatus::aborted_non_finite;
      return out;
    }
    if (delta.norm() <= cfg.step_tol * (out.z.norm() + cfg.step_tol)) {
      out.status = LMStatus::converged_step;
      return out;
    }

    bool accepted = false;
    for (double alpha : kStepLengths) {
      if (out.evaluations >= cfg.max_residual_evals) break;
      probe = out.z + alpha * delta;
      if (!eval(probe, r_probe)) {
        out.status = LMStatus::aborted_non_finite;
        return out;
      }
      const double f_probe = r_probe.norm();
      if (f_probe < f) {
        out.z = probe;
        r = r_probe;
        f = f_probe;
        accepted = true;
        break;
      }
    }

    if (accepted) {
      out.residual_norm = f;
      out.accepted_norms.push_back(f);
      lambda /= 3.0;
      have_jacobian = false;
      if (f <= cfg.residual_tol) {
        out.status = LMStatus::converged_residual;
        return out;
      }
    } else {
      lambda *= 2.0;
    }
    if (out.evaluations >= cfg.max_residual_evals) break;
  }
  out.status = LMStatus::budget_exhausted;
  return out;
}

}  // namespace nmrom
