#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "nmrom/error.hpp"

namespace nmrom {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Leading left singular vectors of a snapshot matrix.
struct PodBasis {
  Matrix modes;                  // d x r, orthonormal columns
  Vector singular_values;        // all min(d, N) of them, descending
};

/// Flip each column so its largest-magnitude entry is positive.
inline void fix_signs(Matrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index imax = 0;
    m.col(j).cwiseAbs().maxCoeff(&imax);
    if (m(imax, j) < 0.0) m.col(j) *= -1.0;
  }
}

/// Thin SVD of the snapshot matrix truncated to `r` modes.
inline PodBasis pod(const Matrix& X, Eigen::Index r) {
  const Eigen::Index dmin = std::min(X.rows(), X.cols());
  if (r < 1 || r > dmin) {
    throw std::out_of_range("pod: r=" + std::to_string(r) + " outside [1, " + std::to_string(dmin) + "]");
  }
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
  PodBasis basis;
  basis.modes = svd.matrixU().leftCols(r);
  basis.singular_values = svd.singularValues();
  fix_signs(basis.modes);
  return basis;
}

/// sqrt of the energy in the discarded singular values, sqrt(sum_{i>r} sigma_i^2).
inline double residual_energy(const Vector& sigma, Eigen::Index r) {
  double s = 0.0;
  for (Eigen::Index i = std::max<Eigen::Index>(r, 0); i < sigma.size(); ++i) s += sigma[i] * sigma[i];
  return std::sqrt(s);
}

/// Moore-Penrose pseudo-inverse with cutoff max(rows, cols) * sigma_1 * 1e-14.
inline Matrix pseudo_inverse(const Matrix& A) {
  if (A.size() == 0) throw std::invalid_argument("pseudo_inverse: empty matrix");
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = static_cast<double>(std::max(A.rows(), A.cols())) * (s.size() ? s[0] : 0.0) * 1e-14;
  Vector inv(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) inv[i] = (s[i] > cutoff && s[i] > 0.0) ? 1.0 / s[i] : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace nmrom
