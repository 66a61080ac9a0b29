#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/fvm/fvm.hpp"
#include "nmrom/io/binary.hpp"
#include "nmrom/linalg/dense.hpp"
#include "nmrom/metrics.hpp"
#include "nmrom/parallel.hpp"

namespace nmrom {

/// Snapshot matrix with one column per (parameter, time) pair, ordered
/// parameter-major then time-minor. Times are multiples of dt * stride.
struct SnapshotSet {
  std::string problem;  // "ncl" or "swe"
  Index channels = 0;
  Index nx = 0;
  Index ny = 0;
  std::vector<double> params;
  std::vector<std::vector<double>> times;  // per parameter
  Matrix data;                             // d x N
  double dt = 0.0;
  std::uint32_t stride = 1;

  [[nodiscard]] Index cells() const noexcept { return nx * ny; }
  [[nodiscard]] Index dofs() const noexcept { return channels * nx * ny; }
  [[nodiscard]] Index count() const noexcept { return static_cast<Index>(data.cols()); }
  [[nodiscard]] Index n_params() const noexcept { return params.size(); }

  /// Column index of the first snapshot of parameter `p`.
  [[nodiscard]] Index offset(Index p) const {
    Index o = 0;
    for (Index i = 0; i < p; ++i) o += times[i].size();
    return o;
  }

  [[nodiscard]] std::span<const double> column(Index j) const {
    return {data.data() + static_cast<Eigen::Index>(j) * data.rows(), static_cast<std::size_t>(data.rows())};
  }

  [[nodiscard]] Field field(Index j) const {
    auto c = column(j);
    return Field(channels, std::vector<double>(c.begin(), c.end()));
  }

  void validate() const {
    if (problem != "ncl" && problem != "swe") throw ConfigError("snapshot set: unknown problem '" + problem + "'");
    if (times.size() != params.size()) throw ShapeError("snapshot set: one time list per parameter required");
    Index total = 0;
    for (const auto& t : times) total += t.size();
    if (total != count()) throw ShapeError("snapshot set: column count does not match time lists");
    if (static_cast<Index>(data.rows()) != dofs()) throw ShapeError("snapshot set: row count != c * nx * ny");
    if (!data.allFinite()) throw NumericError("snapshot set: non-finite entries");
  }
};

inline std::vector<double> equispaced(double lo, double hi, Index n) {
  if (n == 0) return {};
  if (n == 1) return {lo};
  std::vector<double> out(n);
  for (Index i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  out.back() = hi;
  return out;
}

/// Full-order rollouts at the given parameters, concatenated.
inline SnapshotSet build_snapshot_set(const fvm::Problem& problem, const std::vector<double>& mus, int sample_every,
                                      int threads = 1) {
  if (mus.empty()) throw ConfigError("build_snapshot_set: no parameters");
  if (sample_every < 1) throw ConfigError("build_snapshot_set: sample_every must be >= 1");
  std::vector<fvm::SnapshotSeries> series(mus.size());
  parallel_for(mus.size(), threads, [&](std::size_t i) {
    try {
      series[i] = fvm::fom_rollout(fvm::with_mu(problem, mus[i]), sample_every);
    } catch (const std::exception& e) {
      throw NumericError("snapshot generation failed at mu=" + std::to_string(mus[i]) + ": " + e.what());
    }
  });
  const Grid& g = fvm::grid_of(problem);
  SnapshotSet set;
  set.problem = fvm::problem_id(problem);
  set.channels = fvm::channels_of(problem);
  set.nx = g.nx();
  set.ny = g.ny();
  set.params = mus;
  set.dt = fvm::dt_of(problem);
  set.stride = static_cast<std::uint32_t>(sample_every);
  Index total = 0;
  for (const auto& s : series) total += s.states.size();
  set.data.resize(static_cast<Eigen::Index>(set.dofs()), static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (auto& s : series) {
    set.times.push_back(s.times);
    for (const auto& st : s.states) set.data.col(col++) = Eigen::Map<const Vector>(st.values.data(), st.values.size());
  }
  return set;
}

/// Training sweep: `n_params` equispaced values in [lo, hi], endpoints included.
inline SnapshotSet build_training_set(const fvm::Problem& problem, double lo, double hi, Index n_params,
                                      int sample_every, int threads = 1) {
  if (n_params < 2) throw ConfigError("build_training_set: need at least 2 parameters");
  if (!(hi > lo)) throw ConfigError("build_training_set: empty parameter range");
  return build_snapshot_set(problem, equispaced(lo, hi, n_params), sample_every, threads);
}

/// Columns of the selected parameters only, with their time lists.
inline SnapshotSet select_params(const SnapshotSet& set, const std::vector<Index>& which) {
  SnapshotSet out = set;
  out.params.clear();
  out.times.clear();
  Index total = 0;
  for (Index p : which) {
    if (p >= set.n_params()) throw std::out_of_range("select_params: parameter index out of range");
    total += set.times[p].size();
  }
  out.data.resize(set.data.rows(), static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (Index p : which) {
    out.params.push_back(set.params[p]);
    out.times.push_back(set.times[p]);
    const Index o = set.offset(p);
    for (Index k = 0; k < set.times[p].size(); ++k) out.data.col(col++) = set.data.col(static_cast<Eigen::Index>(o + k));
  }
  return out;
}

/// Every `every`-th snapshot of each parameter, starting at the first.
inline SnapshotSet thin_times(const SnapshotSet& set, Index every) {
  if (every < 1) throw ConfigError("thin_times: every must be >= 1");
  SnapshotSet out = set;
  out.stride = set.stride * static_cast<std::uint32_t>(every);
  out.times.clear();
  std::vector<Eigen::Index> cols;
  for (Index p = 0; p < set.n_params(); ++p) {
    std::vector<double> t;
    const Index o = set.offset(p);
    for (Index k = 0; k < set.times[p].size(); k += every) {
      t.push_back(set.times[p][k]);
      cols.push_back(static_cast<Eigen::Index>(o + k));
    }
    out.times.push_back(std::move(t));
  }
  out.data.resize(set.data.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.data.col(static_cast<Eigen::Index>(j)) = set.data.col(cols[j]);
  return out;
}

/// Per-DOF mean and per-channel extrema of the centered training data.
struct NormalizationStats {
  Index channels = 0;
  Vector mean;                 // d values
  std::vector<double> min;     // c values
  std::vector<double> max;     // c values
  std::vector<bool> degenerate;

  [[nodiscard]] Index dofs() const noexcept { return static_cast<Index>(mean.size()); }
  [[nodiscard]] Index cells() const noexcept { return channels ? dofs() / channels : 0; }
  [[nodiscard]] double scale(Index k) const { return degenerate[k] ? 1.0 : 2.0 / (max[k] - min[k]); }
  [[nodiscard]] double shift(Index k) const { return 0.5 * (min[k] + max[k]); }
};

inline NormalizationStats fit_normalization(const SnapshotSet& train) {
  if (train.count() < 1) throw ConfigError("fit_normalization: empty training set");
  NormalizationStats s;
  s.channels = train.channels;
  s.mean = train.data.rowwise().mean();
  const Index n = train.cells();
  s.min.assign(s.channels, 0.0);
  s.max.assign(s.channels, 0.0);
  s.degenerate.assign(s.channels, false);
  for (Index k = 0; k < s.channels; ++k) {
    const auto block = train.data.middleRows(static_cast<Eigen::Index>(k * n), static_cast<Eigen::Index>(n));
    const auto mean = s.mean.segment(static_cast<Eigen::Index>(k * n), static_cast<Eigen::Index>(n));
    const Matrix centered = block.colwise() - mean;
    s.min[k] = centered.minCoeff();
    s.max[k] = centered.maxCoeff();
    if (!(s.max[k] > s.min[k])) {
      s.degenerate[k] = true;
      log::warn("normalization: channel " + std::to_string(k) + " is constant, scale forced to 1");
    }
  }
  return s;
}

/// 2 / (max - min) (U - mean - (min + max) / 2), channel-wise; in place.
inline void normalize_inplace(std::span<double> u, const NormalizationStats& s) {
  if (u.size() != s.dofs()) throw ShapeError("normalize: field length does not match statistics");
  const Index n = s.cells();
  for (Index k = 0; k < s.channels; ++k) {
    const double a = s.scale(k), b = s.shift(k);
    for (Index i = k * n; i < (k + 1) * n; ++i) u[i] = a * (u[i] - s.mean[static_cast<Eigen::Index>(i)] - b);
  }
}

inline void denormalize_inplace(std::span<double> u, const NormalizationStats& s) {
  if (u.size() != s.dofs()) throw ShapeError("denormalize: field length does not match statistics");
  const Index n = s.cells();
  for (Index k = 0; k < s.channels; ++k) {
    const double a = 1.0 / s.scale(k), b = s.shift(k);
    for (Index i = k * n; i < (k + 1) * n; ++i) u[i] = a * u[i] + b + s.mean[static_cast<Eigen::Index>(i)];
  }
}

inline std::vector<double> normalize(std::span<const double> u, const NormalizationStats& s) {
  std::vector<double> out(u.begin(), u.end());
  normalize_inplace(out, s);
  return out;
}

inline std::vector<double> denormalize(std::span<const double> u, const NormalizationStats& s) {
  std::vector<double> out(u.begin(), u.end());
  denormalize_inplace(out, s);
  return out;
}

inline Matrix normalize_columns(const Matrix& X, const NormalizationStats& s) {
  Matrix out = X;
  for (Eigen::Index j = 0; j < out.cols(); ++j) normalize_inplace({out.col(j).data(), static_cast<std::size_t>(out.rows())}, s);
  return out;
}

// NMSNAP v1 layout (little-endian): magic, u32 version, u32 c, nx, ny,
// n_params, per-param u32 time count, f64 dt, u32 stride, f64 mu list,
// f64 data column-major, u32 CRC32 of all preceding bytes.
inline constexpr std::string_view kSnapshotMagic = "NMSNAP1\n";
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void save_snapshots(const SnapshotSet& set, const std::filesystem::path& path) {
  set.validate();
  if (set.count() == 0) throw ConfigError("save_snapshots: refusing to write an empty set");
  for (Index p = 0; p < set.n_params(); ++p) {
    for (Index k = 0; k < set.times[p].size(); ++k) {
      const double expect = static_cast<double>(k) * set.dt * set.stride;
      if (std::abs(set.times[p][k] - expect) > 1e-9 * std::max(1.0, expect)) {
        throw ConfigError("save_snapshots: times must be k * dt * stride from zero");
      }
    }
  }
  io::ByteWriter w;
  w.text(kSnapshotMagic);
  w.u32(kSnapshotVersion);
  w.u32(static_cast<std::uint32_t>(set.channels));
  w.u32(static_cast<std::uint32_t>(set.nx));
  w.u32(static_cast<std::uint32_t>(set.ny));
  w.u32(static_cast<std::uint32_t>(set.n_params()));
  for (const auto& t : set.times) w.u32(static_cast<std::uint32_t>(t.size()));
  w.f64(set.dt);
  w.u32(set.stride);
  w.f64s(set.params.data(), set.params.size());
  w.f64s(set.data.data(), static_cast<std::size_t>(set.data.size()));
  w.finish(path);
}

inline SnapshotSet load_snapshots(const std::filesystem::path& path) {
  io::ByteReader r(path, kSnapshotMagic);
  const std::uint32_t version = r.u32();
  if (version != kSnapshotVersion) {
    throw FormatError(path.string() + ": unsupported snapshot version " + std::to_string(version));
  }
  r.verify_checksum();
  SnapshotSet set;
  set.channels = r.u32();
  set.nx = r.u32();
  set.ny = r.u32();
  if (set.channels == 2) set.problem = "ncl";
  else if (set.channels == 3) set.problem = "swe";
  else throw FormatError(path.string() + ": unexpected channel count " + std::to_string(set.channels));
  const std::uint32_t n_params = r.u32();
  if (std::size_t{n_params} * 4 > r.remaining()) throw FormatError(path.string() + ": truncated");
  std::vector<std::uint32_t> counts(n_params);
  std::size_t total = 0;
  for (auto& c : counts) total += (c = r.u32());
  set.dt = r.f64();
  set.stride = r.u32();
  set.params.resize(n_params);
  r.f64s(set.params.data(), n_params);
  const std::size_t d = set.channels * set.nx * set.ny;
  if (total * d * sizeof(double) != r.remaining()) throw FormatError(path.string() + ": data size mismatch");
  set.data.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(total));
  r.f64s(set.data.data(), d * total);
  r.expect_end();
  for (auto c : counts) {
    std::vector<double> t(c);
    for (std::uint32_t k = 0; k < c; ++k) t[k] = static_cast<double>(k) * set.dt * set.stride;
    set.times.push_back(std::move(t));
  }
  set.validate();
  return set;
}

/// Per-parameter relative errors of the orthogonal projection onto the basis.
inline std::vector<ErrorStats> projection_errors(const SnapshotSet& test, const PodBasis& basis) {
  if (basis.modes.rows() != static_cast<Eigen::Index>(test.dofs())) throw ShapeError("projection_errors: basis rows != d");
  std::vector<ErrorStats> out;
  const Matrix& V = basis.modes;
  for (Index p = 0; p < test.n_params(); ++p) {
    ErrorAccumulator acc;
    const Index o = test.offset(p);
    for (Index k = 0; k < test.times[p].size(); ++k) {
      const auto u = test.data.col(static_cast<Eigen::Index>(o + k));
      const Vector proj = V * (V.transpose() * u);
      acc.add({proj.data(), static_cast<std::size_t>(proj.size())}, test.column(o + k));
    }
    out.push_back(acc.finish("projection mu=" + std::to_string(test.params[p])));
  }
  return out;
}

}  // namespace nmrom
