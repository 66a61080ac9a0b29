#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nmrom/autoencoder.hpp"
#include "nmrom/error.hpp"
#include "nmrom/fvm/fvm.hpp"
#include "nmrom/grid.hpp"
#include "nmrom/linalg/dense.hpp"
#include "nmrom/linalg/lm.hpp"
#include "nmrom/log.hpp"
#include "nmrom/metrics.hpp"
#include "nmrom/parallel.hpp"
#include "nmrom/snapshots.hpp"

namespace nmrom {

enum class RomKind { nm_lspg, roc, roc_ts, gnat, gnat_ts };

inline std::string kind_name(RomKind k) {
  switch (k) {
    case RomKind::nm_lspg: return "nm-lspg";
    case RomKind::roc: return "nm-lspg-roc";
    case RomKind::roc_ts: return "nm-lspg-roc-ts";
    case RomKind::gnat: return "nm-lspg-gnat";
    case RomKind::gnat_ts: return "nm-lspg-gnat-ts";
  }
  return "?";
}

inline RomKind parse_kind(const std::string& s) {
  for (RomKind k : {RomKind::nm_lspg, RomKind::roc, RomKind::roc_ts, RomKind::gnat, RomKind::gnat_ts})
    if (kind_name(k) == s) return k;
  throw ConfigError("unknown ROM variant '" + s + "'");
}

inline bool is_hyper(RomKind k) noexcept { return k != RomKind::nm_lspg; }
inline bool is_ts(RomKind k) noexcept { return k == RomKind::roc_ts || k == RomKind::gnat_ts; }
inline bool is_gnat(RomKind k) noexcept { return k == RomKind::gnat || k == RomKind::gnat_ts; }

/// Default forced points: the four domain corners.
inline std::vector<Index> corner_cells(const Grid& g) {
  std::vector<Index> c{g.cell(0, 0), g.cell(g.nx() - 1, 0), g.cell(0, g.ny() - 1), g.cell(g.nx() - 1, g.ny() - 1)};
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

/// Greedy magic-point selection on POD modes of the state snapshots.
///
/// The n_a = r_h - r_init free points are picked over n_it = min(n_modes, n_a)
/// iterations; modes and points are split evenly across iterations, the
/// remainders going to the first ones. Iteration 1 scores the raw modes;
/// later iterations score the least-squares residual of the new modes
/// against the modes already in use, fitted on the rows sampled so far.
/// A cell's score is the squared sum over working vectors and channels;
/// ties go to the lowest cell index.
inline std::vector<Index> select_magic_points(const Matrix& modes, Index channels, const Grid& grid,
                                              const std::vector<Index>& forced, Index r_h) {
  const Index cells = grid.cells();
  if (static_cast<Index>(modes.rows()) != channels * cells) throw ShapeError("select_magic_points: mode rows != c * cells");
  if (r_h > cells) throw std::invalid_argument("select_magic_points: r_h exceeds the number of cells");
  std::vector<Index> selected;
  std::vector<char> taken(cells, 0);
  for (Index f : forced) {
    grid.check_cell(f);
    if (!taken[f]) {
      taken[f] = 1;
      selected.push_back(f);
    }
  }
  if (r_h < selected.size() + 1) throw std::invalid_argument("select_magic_points: need r_h >= r_init + 1");
  const Index n_c = static_cast<Index>(modes.cols());
  if (n_c == 0) throw std::invalid_argument("select_magic_points: no modes");
  const Index n_a = r_h - selected.size();
  const Index n_it = std::min(n_c, n_a);
  auto share = [n_it](Index total, Index it) { return total / n_it + (it < total % n_it ? 1 : 0); };

  Index used_modes = 0;
  for (Index it = 0; it < n_it; ++it) {
    const Index nm = share(n_c, it), np = share(n_a, it);
    Matrix work = modes.middleCols(static_cast<Eigen::Index>(used_modes), static_cast<Eigen::Index>(nm));
    if (it > 0) {
      std::vector<Eigen::Index> rows;
      for (Index k = 0; k < channels; ++k)
        for (Index c : selected) rows.push_back(static_cast<Eigen::Index>(k * cells + c));
      const Matrix prev = modes.leftCols(static_cast<Eigen::Index>(used_modes));
      Matrix A(static_cast<Eigen::Index>(rows.size()), prev.cols()), B(static_cast<Eigen::Index>(rows.size()), work.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        A.row(static_cast<Eigen::Index>(i)) = prev.row(rows[i]);
        B.row(static_cast<Eigen::Index>(i)) = work.row(rows[i]);
      }
      work -= prev * (pseudo_inverse(A) * B);
    }
    std::vector<double> score(cells, 0.0);
    for (Index k = 0; k < channels; ++k)
      for (Index c = 0; c < cells; ++c)
        score[c] += work.row(static_cast<Eigen::Index>(k * cells + c)).squaredNorm();
    for (Index p = 0; p < np; ++p) {
      Index best = cells;
      for (Index c = 0; c < cells; ++c)
        if (!taken[c] && (best == cells || score[c] > score[best])) best = c;
      taken[best] = 1;
      selected.push_back(best);
    }
    used_modes += nm;
  }
  return selected;
}

/// Selection from a snapshot set: POD of the raw state snapshots.
inline std::vector<Index> select_magic_points(const SnapshotSet& train, Index n_modes, const std::vector<Index>& forced,
                                              Index r_h) {
  const auto basis = pod(train.data, static_cast<Eigen::Index>(n_modes));
  return select_magic_points(basis.modes, train.channels, Grid(train.nx, train.ny), forced, r_h);
}

/// (P Phi)^+ for the sampled rows: residual rows at the magic points, all
/// channels, channel-major.
struct GnatProjector {
  Matrix pinv;
  bool rank_deficient = false;

  [[nodiscard]] Vector apply(const Vector& sampled_residual) const { return pinv * sampled_residual; }
};

inline Matrix sample_rows(const Matrix& Phi, Index channels, const SubmeshProjector& proj) {
  const Index cells = proj.grid().cells();
  if (static_cast<Index>(Phi.rows()) != channels * cells) throw ShapeError("gnat: basis rows != c * cells");
  Matrix P(static_cast<Eigen::Index>(channels * proj.r_h()), Phi.cols());
  Eigen::Index i = 0;
  for (Index k = 0; k < channels; ++k)
    for (Index m : proj.magic_points()) P.row(i++) = Phi.row(static_cast<Eigen::Index>(k * cells + m));
  return P;
}

inline GnatProjector build_gnat(const Matrix& Phi, const SubmeshProjector& proj, Index channels) {
  const Matrix PPhi = sample_rows(Phi, channels, proj);
  if (PPhi.rows() < PPhi.cols()) throw ConfigError("gnat: need c * r_h >= number of basis vectors");
  GnatProjector g;
  g.pinv = pseudo_inverse(PPhi);
  Eigen::FullPivLU<Matrix> lu(PPhi);
  if (lu.rank() < PPhi.cols()) {
    g.rank_deficient = true;
    log::warn("gnat: sampled basis is rank deficient; using the pseudo-inverse");
  }
  return g;
}

/// One latent time-stepping scheme with its hyper-reduction data.
struct RomVariant {
  RomKind kind = RomKind::nm_lspg;
  std::shared_ptr<const SubmeshProjector> proj;
  std::shared_ptr<const GnatProjector> gnat;
  std::shared_ptr<const CompressedDecoder> ts;

  /// Halo sufficiency and decoder consistency, checked before any rollout.
  void validate(const fvm::Problem& p) const {
    if (!is_hyper(kind)) return;
    if (!proj) throw ConfigError(kind_name(kind) + ": missing submesh");
    if (!proj->covers_stencils(fvm::stencil_layers_of(p))) throw ConfigError(kind_name(kind) + ": halo misses stencil cells");
    if (proj->grid().cells() != fvm::grid_of(p).cells()) throw ConfigError(kind_name(kind) + ": submesh grid mismatch");
    if (is_gnat(kind) && !gnat) throw ConfigError(kind_name(kind) + ": missing GNAT projector");
    if (is_gnat(kind) && static_cast<Index>(gnat->pinv.cols()) != fvm::channels_of(p) * proj->r_h()) {
      throw ConfigError(kind_name(kind) + ": GNAT projector does not match the submesh");
    }
    if (is_ts(kind)) {
      if (!ts) throw ConfigError(kind_name(kind) + ": missing compressed decoder");
      if (ts->halo != proj->halo()) throw ConfigError(kind_name(kind) + ": compressed decoder halo mismatch");
    }
  }
};

inline RomVariant make_variant(RomKind kind, const SubmeshProjector* proj = nullptr, const Matrix* gnat_basis = nullptr,
                               const CompressedDecoder* ts = nullptr) {
  RomVariant v;
  v.kind = kind;
  if (!is_hyper(kind)) return v;
  if (!proj) throw ConfigError(kind_name(kind) + " needs magic points");
  v.proj = std::make_shared<SubmeshProjector>(*proj);
  if (is_gnat(kind)) {
    if (!gnat_basis) throw ConfigError(kind_name(kind) + " needs a GNAT basis");
    const Index channels = static_cast<Index>(gnat_basis->rows()) / proj->grid().cells();
    v.gnat = std::make_shared<GnatProjector>(build_gnat(*gnat_basis, *proj, channels));
  }
  if (is_ts(kind)) {
    if (!ts) throw ConfigError(kind_name(kind) + " needs a compressed decoder");
    v.ts = std::make_shared<CompressedDecoder>(*ts);
  }
  return v;
}

/// Mutable per-rollout evaluation context: the networks cache activations,
/// so each concurrent rollout owns its copies.
class LatentStepper {
 public:
  LatentStepper(const fvm::Problem& p, const CaeModel& cae, const RomVariant& v)
      : problem_(p), cae_(cae), variant_(v) {
    variant_.validate(p);
    if (fvm::problem_id(p) != cae.problem) throw ConfigError("ROM: CAE trained for a different problem");
    if (fvm::grid_of(p).nx() != cae.nx || fvm::grid_of(p).ny() != cae.ny) throw ConfigError("ROM: CAE grid mismatch");
    if (is_ts(v.kind)) ts_ = *v.ts;
  }

  [[nodiscard]] const RomVariant& variant() const noexcept { return variant_; }
  CaeModel& cae() noexcept { return cae_; }

  /// Decoder output the residual is assembled from: the full field, the
  /// restricted full decode, or the compressed decoder's halo values.
  std::vector<double> state(const Vector& z) {
    if (is_ts(variant_.kind)) return compressed_decode(ts_, z);
    Field f = decode(cae_, z);
    if (!is_hyper(variant_.kind)) return std::move(f.values);
    return restrict_field(f.values, f.channels, *variant_.proj, Target::halo);
  }

  Vector residual(const std::vector<double>& cur, const std::vector<double>& prev) const {
    std::vector<double> r;
    if (!is_hyper(variant_.kind)) {
      const Index c = fvm::channels_of(problem_);
      r = fvm::residual(problem_, Field(c, cur), Field(c, prev));
    } else {
      r = fvm::residual_restricted(problem_, cur, prev, *variant_.proj);
    }
    Vector out = Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
    if (is_gnat(variant_.kind)) return variant_.gnat->apply(out);
    return out;
  }

  /// Minimizes the (hyper-reduced) residual over z, warm-started at z_prev.
  LMResult step(const Vector& z_prev, const std::vector<double>& prev_state, const LMConfig& cfg) {
    return levenberg_marquardt([&](const Vector& z) { return residual(state(z), prev_state); }, z_prev, cfg);
  }

 private:
  fvm::Problem problem_;
  CaeModel cae_;
  RomVariant variant_;
  CompressedDecoder ts_;
};

/// Single NM-LSPG step on the full residual.
inline LMResult nm_lspg_step(const fvm::Problem& p, const CaeModel& cae, const Vector& z_prev, const LMConfig& cfg) {
  LatentStepper s(p, cae, RomVariant{});
  return s.step(z_prev, s.state(z_prev), cfg);
}

inline LMResult hyper_reduced_step(const fvm::Problem& p, const CaeModel& cae, const RomVariant& v, const Vector& z_prev,
                                   const LMConfig& cfg) {
  LatentStepper s(p, cae, v);
  return s.step(z_prev, s.state(z_prev), cfg);
}

struct LatentTrajectory {
  double mu = 0.0;
  std::string variant;
  double dt = 0.0;
  double t0 = 0.0;
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<int> evals;          // per step (excluding the initial state)
  std::vector<double> ms;          // per step wall clock
  std::vector<double> residual_norms;
  long failed_step = -1;           // first step whose LM aborted
  int budget = 0;                  // residual-evaluation budget in force

  [[nodiscard]] bool truncated() const noexcept { return failed_step >= 0; }
  [[nodiscard]] double mean_step_ms() const {
    if (ms.empty()) return 0.0;
    double s = 0.0;
    for (double v : ms) s += v;
    return s / static_cast<double>(ms.size());
  }
};

struct RolloutConfig {
  LMConfig lm;
  bool escalate = false;       // retry a failing parameter with a larger budget
  int escalated_budget = 13;
};

namespace detail {
inline LatentTrajectory march(LatentStepper& s, const fvm::Problem& p, const Vector& z0, double t0,
                              const LMConfig& lm) {
  LatentTrajectory t;
  t.mu = fvm::mu_of(p);
  t.variant = kind_name(s.variant().kind);
  t.dt = fvm::dt_of(p);
  t.t0 = t0;
  t.budget = lm.max_residual_evals;
  t.times.push_back(t0);
  t.states.push_back(z0);
  std::vector<double> prev = s.state(z0);
  const long steps = std::lround((fvm::t_final_of(p) - t0) / t.dt);
  for (long n = 1; n <= steps; ++n) {
    const auto start = std::chrono::steady_clock::now();
    const auto res = s.step(t.states.back(), prev, lm);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    t.evals.push_back(res.evaluations);
    t.ms.push_back(ms);
    t.residual_norms.push_back(res.residual_norm);
    if (res.aborted()) {
      t.failed_step = n;
      log::warn(t.variant + " mu=" + std::to_string(t.mu) + ": LM aborted at step " + std::to_string(n));
      break;
    }
    t.states.push_back(res.z);
    t.times.push_back(t0 + static_cast<double>(n) * t.dt);
    prev = s.state(res.z);
  }
  return t;
}
}  // namespace detail

/// Latent trajectory marching with the FOM time step from z0 at t0; by
/// default z0 = encode(U0) at t0 = 0. With escalation enabled a truncated
/// trajectory is recomputed once with the larger budget.
inline LatentTrajectory rollout(const fvm::Problem& p, const CaeModel& cae, const RomVariant& v,
                                const RolloutConfig& cfg, const std::optional<Vector>& start = {}, double t0 = 0.0) {
  if (!(t0 >= 0.0) || t0 > fvm::t_final_of(p)) throw ConfigError("rollout: t0 outside [0, t_final]");
  LatentStepper s(p, cae, v);
  const Vector z0 = start ? *start : encode(s.cae(), fvm::initial_condition(p).values);
  if (z0.size() != static_cast<Eigen::Index>(kLatentDim) || !z0.allFinite()) throw NumericError("rollout: bad initial latent");
  auto t = detail::march(s, p, z0, t0, cfg.lm);
  if (t.truncated() && cfg.escalate && cfg.escalated_budget > cfg.lm.max_residual_evals) {
    LMConfig lm = cfg.lm;
    lm.max_residual_evals = cfg.escalated_budget;
    log::info("escalating LM budget to " + std::to_string(lm.max_residual_evals) + " for mu=" + std::to_string(t.mu));
    t = detail::march(s, p, z0, t0, lm);
  }
  return t;
}

/// Rollouts for several parameters; each worker owns its model copies.
inline std::vector<LatentTrajectory> rollout_many(const fvm::Problem& base, const std::vector<double>& mus,
                                                  const CaeModel& cae, const RomVariant& v, const RolloutConfig& cfg,
                                                  int threads = 1) {
  std::vector<LatentTrajectory> out(mus.size());
  parallel_for(mus.size(), threads, [&](std::size_t i) { out[i] = rollout(fvm::with_mu(base, mus[i]), cae, v, cfg); });
  return out;
}

/// Decoded states at the sampled times of one test parameter, compared to
/// the snapshots. Snapshots before t0 and the first `time_cut` ones are
/// skipped; states missing because of truncation are counted in `missing`.
struct TrajectoryErrors {
  ErrorStats stats;
  Index missing = 0;
};

inline TrajectoryErrors trajectory_errors(const LatentTrajectory& t, CaeModel& cae, const SnapshotSet& test, Index param,
                                          Index time_cut = 0) {
  TrajectoryErrors out;
  ErrorAccumulator acc;
  const Index o = test.offset(param);
  const auto& times = test.times[param];
  for (Index k = time_cut; k < times.size(); ++k) {
    if (times[k] < t.t0 - 1e-12) continue;
    const auto step = static_cast<std::size_t>(std::llround((times[k] - t.t0) / t.dt));
    if (step >= t.states.size()) {
      ++out.missing;
      continue;
    }
    const Field f = decode(cae, t.states[step]);
    acc.add(f.values, test.column(o + k));
  }
  out.stats = acc.finish(t.variant + " mu=" + std::to_string(t.mu));
  return out;
}

/// Full-field reconstructions every `stride` steps, as a one-parameter set.
inline SnapshotSet trajectory_snapshots(const LatentTrajectory& t, CaeModel& cae, std::uint32_t stride) {
  if (stride == 0) throw ConfigError("trajectory_snapshots: stride must be positive");
  SnapshotSet s;
  s.problem = cae.problem;
  s.channels = cae.channels;
  s.nx = cae.nx;
  s.ny = cae.ny;
  s.params = {t.mu};
  s.dt = t.dt;
  s.stride = stride;
  std::vector<double> times;
  std::vector<Index> steps;
  for (Index k = 0; k < t.states.size(); k += stride) {
    steps.push_back(k);
    times.push_back(t.times[k]);
  }
  s.times = {times};
  Matrix z(static_cast<Eigen::Index>(kLatentDim), static_cast<Eigen::Index>(steps.size()));
  for (std::size_t j = 0; j < steps.size(); ++j) z.col(static_cast<Eigen::Index>(j)) = t.states[steps[j]];
  s.data = decode_batch(cae, z);
  return s;
}

/// CSV columns: t,z1,z2,z3,z4,n_evals,ms (the initial state has 0 evals).
inline void write_trajectory_csv(const LatentTrajectory& t, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(17);
  f << "t,z1,z2,z3,z4,n_evals,ms\n";
  for (std::size_t i = 0; i < t.states.size(); ++i) {
    f << t.times[i];
    for (Eigen::Index k = 0; k < t.states[i].size(); ++k) f << ',' << t.states[i][k];
    f << ',' << (i ? t.evals[i - 1] : 0) << ',' << (i ? t.ms[i - 1] : 0.0) << '\n';
  }
}

}  // namespace nmrom
