#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "nmrom/linalg/dense.hpp"
#include "nmrom/linalg/lm.hpp"
#include "nmrom/linalg/sparse.hpp"

namespace nmrom {
namespace {

// 5-point Laplacian (SPD) on an m x m grid, Dirichlet.
SparseOperator laplacian(std::size_t m, double shift = 0.0) {
  SparseOperator A(m * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t r = j * m + i;
      A.add(r, 4.0 + shift);
      if (i > 0) A.add(r - 1, -1.0);
      if (i + 1 < m) A.add(r + 1, -1.0);
      if (j > 0) A.add(r - m, -1.0);
      if (j + 1 < m) A.add(r + m, -1.0);
      A.finish_row();
    }
  return A;
}

// Upwind-like nonsymmetric, diagonally dominant operator.
SparseOperator convection(std::size_t n) {
  SparseOperator A(n);
  for (std::size_t r = 0; r < n; ++r) {
    A.add(r, 3.0);
    if (r > 0) A.add(r - 1, -1.5);
    if (r + 1 < n) A.add(r + 1, -0.25);
    A.finish_row();
  }
  return A;
}

Matrix to_dense(const SparseOperator& A) {
  Matrix D = Matrix::Zero(A.dim(), A.dim());
  for (std::size_t r = 0; r < A.dim(); ++r) {
    auto c = A.row_cols(r);
    auto v = A.row_values(r);
    for (std::size_t k = 0; k < c.size(); ++k) D(r, c[k]) = v[k];
  }
  return D;
}

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

TEST(SparseOperator, DuplicatesAreSummed) {
  SparseOperator A(2);
  A.add(0, 1.0);
  A.add(0, 2.0);
  A.add(1, 5.0);
  A.finish_row();
  A.add(1, 1.0);
  A.finish_row();
  EXPECT_EQ(A.coeff(0, 0), 3.0);
  EXPECT_EQ(A.nonzeros(), 3u);
  EXPECT_EQ(A * std::vector<double>({1.0, 2.0}), (std::vector<double>{13.0, 2.0}));
}

TEST(SparseOperator, RejectsBadShapes) {
  SparseOperator A(2);
  EXPECT_THROW(A.add(2, 1.0), ShapeError);
  std::vector<double> b(2, 1.0);
  EXPECT_THROW(solve_sparse(A, b), ShapeError);
  A.finish_row();
  A.finish_row();
  EXPECT_THROW(A.finish_row(), ShapeError);
}

class SolverAgainstDense : public ::testing::TestWithParam<SolverMethod> {};

TEST_P(SolverAgainstDense, SpdLaplacianMatchesLu) {
  const auto A = laplacian(4);
  const auto b = random_vector(16, 11);
  LinearSolverConfig cfg{GetParam(), 1e-13, 1e-14, 5000};
  const auto x = solve_sparse(A, b, cfg);
  const Vector ref = to_dense(A).partialPivLu().solve(Eigen::Map<const Vector>(b.data(), 16));
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(x[i], ref[i], 1e-11);
}

INSTANTIATE_TEST_SUITE_P(AllMethods, SolverAgainstDense,
                         ::testing::Values(SolverMethod::bicgstab, SolverMethod::conjugate_gradient,
                                           SolverMethod::gauss_seidel));

TEST(Solver, NonsymmetricBicgstabAndGaussSeidel) {
  const auto A = convection(40);
  const auto b = random_vector(40, 5);
  const Vector ref = to_dense(A).partialPivLu().solve(Eigen::Map<const Vector>(b.data(), 40));
  for (auto m : {SolverMethod::bicgstab, SolverMethod::gauss_seidel}) {
    const auto x = solve_sparse(A, b, {m, 1e-13, 1e-14, 0});
    for (int i = 0; i < 40; ++i) EXPECT_NEAR(x[i], ref[i], 1e-11);
  }
}

TEST(Solver, ReportsToleranceAndWarmStart) {
  const auto A = laplacian(6, 0.5);
  const auto b = random_vector(36, 2);
  std::vector<double> x;
  const auto st = solve_sparse(A, b, x, {SolverMethod::bicgstab, 1e-12, 1e-14, 0});
  EXPECT_LE(st.residual, 1e-12);
  // Starting from the solution needs no iterations.
  const auto again = solve_sparse(A, b, x, {SolverMethod::bicgstab, 1e-10, 1e-14, 0});
  EXPECT_EQ(again.iterations, 0);
}

TEST(Solver, ThrowsWhenIterationCapIsHit) {
  const auto A = laplacian(8);
  const auto b = random_vector(64, 9);
  EXPECT_THROW(solve_sparse(A, b, {SolverMethod::gauss_seidel, 1e-14, 1e-16, 3}), SolverError);
}

Matrix low_rank_snapshots(Eigen::Index d, Eigen::Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd;
  Matrix X(d, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i) X(i, j) = nd(rng) * std::pow(0.6, static_cast<double>(i % 9));
  return X;
}

TEST(Pod, ResidualEnergyEqualsProjectionError) {
  const Matrix X = low_rank_snapshots(40, 25, 3);
  for (Eigen::Index r : {1, 3, 7, 25}) {
    const auto basis = pod(X, r);
    const Matrix V = basis.modes;
    EXPECT_NEAR((V.transpose() * V - Matrix::Identity(r, r)).norm(), 0.0, 1e-12);
    const double direct = (X - V * (V.transpose() * X)).norm();
    EXPECT_NEAR(residual_energy(basis.singular_values, r), direct, 1e-10 * X.norm());
  }
}

TEST(Pod, BeatsRandomSubspaces) {
  const Matrix X = low_rank_snapshots(30, 20, 8);
  const Eigen::Index r = 4;
  const double best = residual_energy(pod(X, r).singular_values, r);
  std::mt19937 rng(1);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix G(30, r);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = nd(rng);
    const Matrix Q = Eigen::HouseholderQR<Matrix>(G).householderQ() * Matrix::Identity(30, r);
    EXPECT_GE((X - Q * (Q.transpose() * X)).norm(), best - 1e-12);
  }
}

TEST(Pod, SignConventionAndBounds) {
  const Matrix X = low_rank_snapshots(12, 6, 4);
  const auto basis = pod(X, 3);
  for (Eigen::Index j = 0; j < 3; ++j) {
    Eigen::Index i = 0;
    basis.modes.col(j).cwiseAbs().maxCoeff(&i);
    EXPECT_GT(basis.modes(i, j), 0.0);
  }
  EXPECT_THROW(pod(X, 0), std::out_of_range);
  EXPECT_THROW(pod(X, 7), std::out_of_range);
}

TEST(PseudoInverse, PenroseConditions) {
  Matrix A = low_rank_snapshots(9, 5, 2);
  A.col(4) = A.col(0) + A.col(1);  // rank deficient
  const Matrix P = pseudo_inverse(A);
  EXPECT_NEAR((A * P * A - A).norm(), 0.0, 1e-10);
  EXPECT_NEAR((P * A * P - P).norm(), 0.0, 1e-10);
  EXPECT_NEAR((A * P - (A * P).transpose()).norm(), 0.0, 1e-10);
  EXPECT_NEAR((P * A - (P * A).transpose()).norm(), 0.0, 1e-10);
}

TEST(PseudoInverse, IdentityForOrthonormalRows) {
  const Matrix I = Matrix::Identity(4, 4);
  EXPECT_NEAR((pseudo_inverse(I) - I).norm(), 0.0, 1e-15);
}

TEST(LevenbergMarquardt, LinearLeastSquaresMatchesNormalEquations) {
  Matrix A(6, 2);
  A << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 2, -1;
  Vector b(6);
  b << 0.3, 1.1, 1.9, 3.2, 3.8, 0.1;
  auto res = [&](const Vector& z) -> Vector { return A * z - b; };
  LMConfig cfg;
  cfg.max_residual_evals = 200;
  const auto out = levenberg_marquardt(res, Vector::Zero(2), cfg);
  const Vector ref = (A.transpose() * A).ldlt().solve(A.transpose() * b);
  EXPECT_NEAR((out.z - ref).norm(), 0.0, 1e-6);
}

TEST(LevenbergMarquardt, RespectsEvaluationBudget) {
  int calls = 0;
  auto rosen = [&](const Vector& z) -> Vector {
    ++calls;
    Vector r(2);
    r << 10.0 * (z[1] - z[0] * z[0]), 1.0 - z[0];
    return r;
  };
  for (int budget : {2, 3, 4, 7, 13}) {
    calls = 0;
    LMConfig cfg;
    cfg.max_residual_evals = budget;
    const auto out = levenberg_marquardt(rosen, Vector::Constant(2, -1.2), cfg);
    EXPECT_LE(calls, budget);
    EXPECT_EQ(out.evaluations, calls);
    EXPECT_LE(out.residual_norm, out.initial_residual_norm);
  }
}

TEST(LevenbergMarquardt, AcceptedNormsAreMonotone) {
  auto res = [](const Vector& z) -> Vector {
    Vector r(3);
    r << std::sin(z[0]) - 0.5, z[0] * z[1] - 1.0, std::exp(z[1]) - 2.0;
    return r;
  };
  LMConfig cfg;
  cfg.max_residual_evals = 60;
  const auto out = levenberg_marquardt(res, Vector::Constant(2, 0.2), cfg);
  ASSERT_GE(out.accepted_norms.size(), 2u);
  for (std::size_t i = 1; i < out.accepted_norms.size(); ++i)
    EXPECT_LT(out.accepted_norms[i], out.accepted_norms[i - 1]);
  EXPECT_EQ(out.accepted_norms.back(), out.residual_norm);
}

TEST(LevenbergMarquardt, AbortsOnNonFiniteResidual) {
  auto res = [](const Vector& z) -> Vector {
    Vector r(1);
    r << (z[0] > 0.0 ? std::nan("") : z[0] + 1.0);
    return r;
  };
  LMConfig cfg;
  const auto out = levenberg_marquardt(res, Vector::Zero(1), cfg);
  EXPECT_TRUE(out.aborted());
  EXPECT_EQ(out.z[0], 0.0);

  auto throwing = [](const Vector&) -> Vector { throw DomainError("negative depth"); };
  EXPECT_TRUE(levenberg_marquardt(throwing, Vector::Zero(1), cfg).aborted());
}

TEST(LevenbergMarquardt, ZeroResidualReturnsImmediately) {
  auto res = [](const Vector& z) -> Vector { return z; };
  const auto out = levenberg_marquardt(res, Vector::Zero(3), LMConfig{});
  EXPECT_EQ(out.status, LMStatus::converged_residual);
  EXPECT_EQ(out.evaluations, 1);
}

TEST(LevenbergMarquardt, RejectsBadConfig) {
  LMConfig cfg;
  cfg.max_residual_evals = 1;
  auto res = [](const Vector& z) -> Vector { return z; };
  EXPECT_THROW(levenberg_marquardt(res, Vector::Ones(1), cfg), ConfigError);
}

}  // namespace
}  // namespace nmrom
