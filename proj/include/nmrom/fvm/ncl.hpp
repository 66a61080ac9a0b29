#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "nmrom/fvm/stencil.hpp"
#include "nmrom/grid.hpp"
#include "nmrom/linalg/sparse.hpp"

namespace nmrom::fvm {

/// 2D viscous conservation law  du/dt + 1/2 div(u (x) u) = nu lap(u)  on the
/// unit square with homogeneous Dirichlet walls. State: two velocity channels.
struct NclProblem {
  Grid grid{60, 60};
  double nu = 1e-4;
  double mu = 1.0;
  double dt = 1e-3;
  double t_final = 2.0;
  LinearSolverConfig solver{SolverMethod::bicgstab, 1e-12, 1e-14, 0};

  static constexpr Index kChannels = 2;
  static constexpr int kStencilLayers = 1;

  void validate() const {
    if (!(nu >= 0.0)) throw ConfigError("ncl: viscosity must be non-negative");
    if (!(dt > 0.0)) throw ConfigError("ncl: time step must be positive");
    if (!(mu > 0.0)) throw ConfigError("ncl: mu must be positive");
    if (!(t_final >= 0.0)) throw ConfigError("ncl: horizon must be non-negative");
  }
};

/// u = v = 0.8 mu sin(2 pi x) sin(2 pi y) on [0, 0.5]^2, zero elsewhere.
inline Field initial_condition_ncl(const Grid& grid, double mu) {
  if (!(mu > 0.0)) throw ConfigError("initial_condition_ncl: mu must be positive");
  Field f(NclProblem::kChannels, grid.cells());
  const double two_pi = 2.0 * std::numbers::pi;
  for (Index c = 0; c < grid.cells(); ++c) {
    const double x = grid.xc(c), y = grid.yc(c);
    const double v = (x <= 0.5 && y <= 0.5) ? 0.8 * mu * std::sin(two_pi * x) * std::sin(two_pi * y) : 0.0;
    f.at(0, c) = v;
    f.at(1, c) = v;
  }
  return f;
}

/// Row of M/dt + C(W) - nu D for the cell at `s`, with the transport field W
/// read from `prev`. Upwind advection with face flux 1/2 (W_f . n) |f|,
/// W_f the arithmetic mean of the two cells; boundary faces carry no flux
/// since the wall value is zero. Diffusion uses the two-point gradient, with
/// half-cell distance at walls.
inline RowCoefficients ncl_row(const NclProblem& p, const FaceGeometry& geo, const StridedView& prev,
                               const RowStencil& s) {
  RowCoefficients c;
  c.diag = p.grid.cell_volume() / p.dt;
  for (int f = 0; f < 4; ++f) {
    const Index n = s.nb[f];
    if (n == kNoCell) {
      c.diag += p.nu * geo.area[f] / (0.5 * geo.dist[f]);
      continue;
    }
    const int ax = geo.axis[f];
    const double w_face = 0.5 * (prev(ax, s.self) + prev(ax, n));
    const double flux = 0.5 * geo.sign[f] * w_face * geo.area[f];
    const double diff = p.nu * geo.area[f] / geo.dist[f];
    c.diag += (flux > 0.0 ? flux : 0.0) + diff;
    c.off[f] = (flux < 0.0 ? flux : 0.0) - diff;
  }
  return c;
}

struct LinearSystem {
  SparseOperator A;
  std::vector<double> b;
};

namespace detail {
inline void check_ncl_state(const NclProblem& p, const Field& f, const char* what) {
  f.check(p.grid, NclProblem::kChannels);
  if (!f.all_finite()) throw NumericError(std::string("ncl: non-finite values in ") + what);
}
}  // namespace detail

/// Assembles A = M/dt + C(U_prev) - nu D and b = M/dt U_prev on the full
/// channel-major DOF vector. A is block diagonal (one identical block per
/// velocity component).
inline LinearSystem assemble_ncl(const Field& u_prev, const NclProblem& p) {
  detail::check_ncl_state(p, u_prev, "previous state");
  const Index n = p.grid.cells();
  const auto geo = face_geometry(p.grid);
  const StridedView prev{u_prev.values.data(), n};
  std::vector<RowCoefficients> rows(n);
  for (Index c = 0; c < n; ++c) rows[c] = ncl_row(p, geo, prev, full_stencil(p.grid, c));

  LinearSystem sys{SparseOperator(NclProblem::kChannels * n), std::vector<double>(NclProblem::kChannels * n)};
  const double m = p.grid.cell_volume() / p.dt;
  for (Index k = 0; k < NclProblem::kChannels; ++k) {
    for (Index c = 0; c < n; ++c) {
      const auto s = full_stencil(p.grid, c);
      sys.A.add(k * n + c, rows[c].diag);
      for (int f = 0; f < 4; ++f)
        if (s.nb[f] != kNoCell) sys.A.add(k * n + s.nb[f], rows[c].off[f]);
      sys.A.finish_row();
      sys.b[k * n + c] = m * u_prev.at(k, c);
    }
  }
  return sys;
}

/// A(U_prev) U - b(U_prev), evaluated row by row.
inline std::vector<double> residual(const NclProblem& p, const Field& state, const Field& state_prev) {
  state.check(p.grid, NclProblem::kChannels);
  detail::check_ncl_state(p, state_prev, "previous state");
  const Index n = p.grid.cells();
  const auto geo = face_geometry(p.grid);
  const StridedView prev{state_prev.values.data(), n};
  const StridedView cur{state.values.data(), n};
  const double m = p.grid.cell_volume() / p.dt;
  std::vector<double> r(NclProblem::kChannels * n);
  for (Index c = 0; c < n; ++c) {
    const auto s = full_stencil(p.grid, c);
    const auto row = ncl_row(p, geo, prev, s);
    for (Index k = 0; k < NclProblem::kChannels; ++k) r[k * n + c] = apply_row(row, cur, k, s) - m * prev(k, c);
  }
  return r;
}

/// Residual rows at the magic points only, reading halo-restricted states.
inline std::vector<double> residual_restricted(const NclProblem& p, std::span<const double> halo_state,
                                               std::span<const double> prev_halo_state, const SubmeshProjector& proj) {
  const Index sh = proj.s_h();
  const Index rh = proj.r_h();
  if (halo_state.size() != NclProblem::kChannels * sh || prev_halo_state.size() != NclProblem::kChannels * sh) {
    throw ShapeError("ncl residual_restricted: halo state length mismatch");
  }
  const auto geo = face_geometry(p.grid);
  const StridedView prev{prev_halo_state.data(), sh};
  const StridedView cur{halo_state.data(), sh};
  const double m = p.grid.cell_volume() / p.dt;
  std::vector<double> r(NclProblem::kChannels * rh);
  const auto& local = proj.local_stencils();
  for (Index j = 0; j < rh; ++j) {
    const auto s = halo_stencil(local[j], proj.magic_points()[j]);
    const auto row = ncl_row(p, geo, prev, s);
    for (Index k = 0; k < NclProblem::kChannels; ++k) r[k * rh + j] = apply_row(row, cur, k, s) - m * prev(k, s.self);
  }
  return r;
}

/// One semi-implicit step: a single linearized implicit solve.
inline Field step_ncl(const NclProblem& p, const Field& u_prev, SolveStats* stats = nullptr) {
  auto sys = assemble_ncl(u_prev, p);
  std::vector<double> x = u_prev.values;
  const auto st = solve_sparse(sys.A, sys.b, x, p.solver);
  if (stats) *stats = st;
  return Field(NclProblem::kChannels, std::move(x));
}

}  // namespace nmrom::fvm
