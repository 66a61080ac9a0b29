#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "nmrom/fvm/ncl.hpp"
#include "nmrom/fvm/stencil.hpp"
#include "nmrom/grid.hpp"
#include "nmrom/linalg/sparse.hpp"

namespace nmrom::fvm {

/// 2D shallow water equations on the unit square with slip walls and
/// zero-gradient depth. State channels: U1, U2 (velocity), h (depth).
struct SweProblem {
  Grid grid{60, 60};
  double g = 9.81;
  double mu = 0.2;
  double dt = 1e-4;
  double t_final = 0.2;
  LinearSolverConfig momentum_solver{SolverMethod::gauss_seidel, 1e-12, 1e-12, 0};
  LinearSolverConfig continuity_solver{SolverMethod::bicgstab, 1e-12, 1e-14, 0};

  static constexpr Index kChannels = 3;
  static constexpr Index kDepth = 2;
  static constexpr int kStencilLayers = 2;

  void validate() const {
    if (!(g > 0.0)) throw ConfigError("swe: gravity must be positive");
    if (!(dt > 0.0)) throw ConfigError("swe: time step must be positive");
    if (!(mu > 0.0)) throw ConfigError("swe: mu must be positive");
    if (!(t_final >= 0.0)) throw ConfigError("swe: horizon must be non-negative");
  }
};

/// Zero velocity; depth mu (1 + e exp(-0.04 / (0.04 - r^2))) inside r^2 < 0.04
/// around (0.5, 0.5), mu elsewhere.
inline Field initial_condition_swe(const Grid& grid, double mu) {
  if (!(mu > 0.0)) throw ConfigError("initial_condition_swe: mu must be positive");
  Field f(SweProblem::kChannels, grid.cells());
  for (Index c = 0; c < grid.cells(); ++c) {
    const double dx = grid.xc(c) - 0.5, dy = grid.yc(c) - 0.5;
    const double r2 = dx * dx + dy * dy;
    const double bump = r2 < 0.04 ? std::numbers::e * std::exp(-0.04 / (0.04 - r2)) : 0.0;
    f.at(SweProblem::kDepth, c) = mu * (1.0 + bump);
  }
  return f;
}

/// Central-difference depth gradient at a cell; walls mirror the cell value.
inline double depth_gradient(const Grid& grid, const StridedView& v, const RowStencil& s, int axis) {
  const Index lo = s.nb[axis == 0 ? 0 : 2];
  const Index hi = s.nb[axis == 0 ? 1 : 3];
  const double h_self = v(SweProblem::kDepth, s.self);
  const double h_lo = lo == kNoCell ? h_self : v(SweProblem::kDepth, lo);
  const double h_hi = hi == kNoCell ? h_self : v(SweProblem::kDepth, hi);
  const double h = axis == 0 ? grid.hx() : grid.hy();
  return (h_hi - h_lo) / (2.0 * h);
}

/// Momentum row for the unknown velocity U^t:
///   vol h^{t-1} / dt U^t + C((hU)^{t-1}) U^t
/// with upwind face fluxes built from the mean discharge of the two cells.
inline RowCoefficients swe_momentum_row(const SweProblem& p, const FaceGeometry& geo, const StridedView& prev,
                                        const RowStencil& s) {
  RowCoefficients c;
  const double h_self = prev(SweProblem::kDepth, s.self);
  c.diag = p.grid.cell_volume() * h_self / p.dt;
  for (int f = 0; f < 4; ++f) {
    const Index n = s.nb[f];
    if (n == kNoCell) continue;  // slip wall: no mass flux
    const int ax = geo.axis[f];
    const double q_face = 0.5 * (h_self * prev(ax, s.self) + prev(SweProblem::kDepth, n) * prev(ax, n));
    const double flux = geo.sign[f] * q_face * geo.area[f];
    c.diag += flux > 0.0 ? flux : 0.0;
    c.off[f] = flux < 0.0 ? flux : 0.0;
  }
  return c;
}

/// Right-hand side of the momentum row: vol/dt (hU)^{t-1} - vol g h G(h), all at t-1.
inline double swe_momentum_rhs(const SweProblem& p, const StridedView& prev, const RowStencil& s, int axis) {
  const double vol = p.grid.cell_volume();
  const double h = prev(SweProblem::kDepth, s.self);
  return vol / p.dt * h * prev(axis, s.self) - vol * p.g * h * depth_gradient(p.grid, prev, s, axis);
}

/// Continuity row for h^t: vol/dt h^t + C_h(U^t) h^t, upwind in h with the
/// face velocity averaged from the fresh velocity field.
inline RowCoefficients swe_continuity_row(const SweProblem& p, const FaceGeometry& geo, const StridedView& velocity,
                                          const RowStencil& s) {
  RowCoefficients c;
  c.diag = p.grid.cell_volume() / p.dt;
  for (int f = 0; f < 4; ++f) {
    const Index n = s.nb[f];
    if (n == kNoCell) continue;
    const int ax = geo.axis[f];
    const double u_face = 0.5 * (velocity(ax, s.self) + velocity(ax, n));
    const double flux = geo.sign[f] * u_face * geo.area[f];
    c.diag += flux > 0.0 ? flux : 0.0;
    c.off[f] = flux < 0.0 ? flux : 0.0;
  }
  return c;
}

namespace detail {
inline void check_depth_positive(std::span<const double> depth) {
  for (double h : depth) {
    if (!(h > 0.0)) throw DomainError("swe: non-positive depth " + std::to_string(h));
  }
}

inline void check_swe_state(const SweProblem& p, const Field& f) {
  f.check(p.grid, SweProblem::kChannels);
  if (!f.all_finite()) throw NumericError("swe: non-finite state");
  check_depth_positive(f.channel(SweProblem::kDepth));
}
}  // namespace detail

/// Momentum system for both velocity components (block diagonal, 2n DOFs).
inline LinearSystem assemble_swe_momentum(const Field& state_prev, const SweProblem& p) {
  detail::check_swe_state(p, state_prev);
  const Index n = p.grid.cells();
  const auto geo = face_geometry(p.grid);
  const StridedView prev{state_prev.values.data(), n};
  LinearSystem sys{SparseOperator(2 * n), std::vector<double>(2 * n)};
  std::vector<RowCoefficients> rows(n);
  for (Index c = 0; c < n; ++c) rows[c] = swe_momentum_row(p, geo, prev, full_stencil(p.grid, c));
  for (int k = 0; k < 2; ++k) {
    for (Index c = 0; c < n; ++c) {
      const auto s = full_stencil(p.grid, c);
      sys.A.add(k * n + c, rows[c].diag);
      for (int f = 0; f < 4; ++f)
        if (s.nb[f] != kNoCell) sys.A.add(k * n + s.nb[f], rows[c].off[f]);
      sys.A.finish_row();
      sys.b[k * n + c] = swe_momentum_rhs(p, prev, s, k);
    }
  }
  return sys;
}

/// Continuity system for h^t given the freshly solved velocity (2n values).
inline LinearSystem assemble_swe_continuity(const Field& state_prev, std::span<const double> velocity,
                                            const SweProblem& p) {
  detail::check_swe_state(p, state_prev);
  const Index n = p.grid.cells();
  if (velocity.size() != 2 * n) throw ShapeError("swe continuity: velocity length mismatch");
  const auto geo = face_geometry(p.grid);
  const StridedView vel{velocity.data(), n};
  LinearSystem sys{SparseOperator(n), std::vector<double>(n)};
  const double m = p.grid.cell_volume() / p.dt;
  for (Index c = 0; c < n; ++c) {
    const auto s = full_stencil(p.grid, c);
    const auto row = swe_continuity_row(p, geo, vel, s);
    sys.A.add(c, row.diag);
    for (int f = 0; f < 4; ++f)
      if (s.nb[f] != kNoCell) sys.A.add(s.nb[f], row.off[f]);
    sys.A.finish_row();
    sys.b[c] = m * state_prev.at(SweProblem::kDepth, c);
  }
  return sys;
}

struct SweSystems {
  LinearSystem momentum;
  LinearSystem continuity;
  Field state;  // (U^t, h^t) after both solves
};

/// Momentum then continuity, each one linear solve, sequentially coupled.
inline SweSystems assemble_and_solve_swe(const SweProblem& p, const Field& state_prev) {
  const Index n = p.grid.cells();
  SweSystems out{assemble_swe_momentum(state_prev, p), {}, {}};
  std::vector<double> u(state_prev.values.begin(), state_prev.values.begin() + 2 * n);
  solve_sparse(out.momentum.A, out.momentum.b, u, p.momentum_solver);
  out.continuity = assemble_swe_continuity(state_prev, u, p);
  std::vector<double> h(state_prev.channel(SweProblem::kDepth).begin(), state_prev.channel(SweProblem::kDepth).end());
  solve_sparse(out.continuity.A, out.continuity.b, h, p.continuity_solver);
  detail::check_depth_positive(h);
  u.insert(u.end(), h.begin(), h.end());
  out.state = Field(SweProblem::kChannels, std::move(u));
  return out;
}

inline Field step_swe(const SweProblem& p, const Field& state_prev) { return assemble_and_solve_swe(p, state_prev).state; }

namespace detail {
inline void swe_rows(const SweProblem& p, const FaceGeometry& geo, const StridedView& cur, const StridedView& prev,
                     const RowStencil& s, double out[3]) {
  const auto mom = swe_momentum_row(p, geo, prev, s);
  for (int k = 0; k < 2; ++k) out[k] = apply_row(mom, cur, k, s) - swe_momentum_rhs(p, prev, s, k);
  const auto cont = swe_continuity_row(p, geo, cur, s);
  out[2] = apply_row(cont, cur, SweProblem::kDepth, s) -
           p.grid.cell_volume() / p.dt * prev(SweProblem::kDepth, s.self);
}
}  // namespace detail

/// Momentum rows (both components) followed by continuity rows, channel-major.
inline std::vector<double> residual(const SweProblem& p, const Field& state, const Field& state_prev) {
  state.check(p.grid, SweProblem::kChannels);
  detail::check_swe_state(p, state_prev);
  const Index n = p.grid.cells();
  const auto geo = face_geometry(p.grid);
  const StridedView prev{state_prev.values.data(), n};
  const StridedView cur{state.values.data(), n};
  std::vector<double> r(SweProblem::kChannels * n);
  double row[3];
  for (Index c = 0; c < n; ++c) {
    detail::swe_rows(p, geo, cur, prev, full_stencil(p.grid, c), row);
    for (Index k = 0; k < SweProblem::kChannels; ++k) r[k * n + c] = row[k];
  }
  return r;
}

inline std::vector<double> residual_restricted(const SweProblem& p, std::span<const double> halo_state,
                                               std::span<const double> prev_halo_state, const SubmeshProjector& proj) {
  const Index sh = proj.s_h();
  const Index rh = proj.r_h();
  if (halo_state.size() != SweProblem::kChannels * sh || prev_halo_state.size() != SweProblem::kChannels * sh) {
    throw ShapeError("swe residual_restricted: halo state length mismatch");
  }
  detail::check_depth_positive(prev_halo_state.subspan(SweProblem::kDepth * sh, sh));
  const auto geo = face_geometry(p.grid);
  const StridedView prev{prev_halo_state.data(), sh};
  const StridedView cur{halo_state.data(), sh};
  std::vector<double> r(SweProblem::kChannels * rh);
  const auto& local = proj.local_stencils();
  double row[3];
  for (Index j = 0; j < rh; ++j) {
    detail::swe_rows(p, geo, cur, prev, halo_stencil(local[j], proj.magic_points()[j]), row);
    for (Index k = 0; k < SweProblem::kChannels; ++k) r[k * rh + j] = row[k];
  }
  return r;
}

/// Total water volume sum(h) hx hy.
inline double total_volume(const Grid& grid, const Field& state) {
  double s = 0.0;
  for (double h : state.channel(SweProblem::kDepth)) s += h;
  return s * grid.cell_volume();
}

}  // namespace nmrom::fvm
