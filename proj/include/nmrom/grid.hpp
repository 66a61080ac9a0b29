#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmrom/error.hpp"

namespace nmrom {

using Index = std::size_t;

/// Structured orthogonal 2D grid on [0, lx] x [0, ly].
///
/// Cells are numbered row-major: `cell = iy * nx + ix`. Cell centers sit at
/// ((ix + 1/2) hx, (iy + 1/2) hy).
class Grid {
 public:
  Grid(Index nx, Index ny, double lx = 1.0, double ly = 1.0) : nx_(nx), ny_(ny), lx_(lx), ly_(ly) {
    if (nx < 3 || ny < 3) throw ConfigError("grid needs at least 3x3 cells");
    if (!(lx > 0.0) || !(ly > 0.0)) throw ConfigError("grid extents must be positive");
  }

  [[nodiscard]] Index nx() const noexcept { return nx_; }
  [[nodiscard]] Index ny() const noexcept { return ny_; }
  [[nodiscard]] double lx() const noexcept { return lx_; }
  [[nodiscard]] double ly() const noexcept { return ly_; }
  [[nodiscard]] double hx() const noexcept { return lx_ / static_cast<double>(nx_); }
  [[nodiscard]] double hy() const noexcept { return ly_ / static_cast<double>(ny_); }
  [[nodiscard]] double cell_volume() const noexcept { return hx() * hy(); }
  [[nodiscard]] Index cells() const noexcept { return nx_ * ny_; }

  [[nodiscard]] Index cell(Index ix, Index iy) const noexcept { return iy * nx_ + ix; }
  [[nodiscard]] Index ix(Index cell) const noexcept { return cell % nx_; }
  [[nodiscard]] Index iy(Index cell) const noexcept { return cell / nx_; }
  [[nodiscard]] double xc(Index cell) const noexcept { return (static_cast<double>(ix(cell)) + 0.5) * hx(); }
  [[nodiscard]] double yc(Index cell) const noexcept { return (static_cast<double>(iy(cell)) + 0.5) * hy(); }

  void check_cell(Index cell) const {
    if (cell >= cells()) {
      throw std::out_of_range("cell index " + std::to_string(cell) + " outside grid of " +
                              std::to_string(cells()) + " cells");
    }
  }

  bool operator==(const Grid&) const = default;

 private:
  Index nx_;
  Index ny_;
  double lx_;
  double ly_;
};

/// Face neighbors in fixed order west, east, south, north. Missing neighbors
/// (outside the grid) are reported as `kNoCell`.
inline constexpr Index kNoCell = static_cast<Index>(-1);

inline std::array<Index, 4> face_neighbors(const Grid& grid, Index cell) {
  const Index ix = grid.ix(cell);
  const Index iy = grid.iy(cell);
  return {
      ix > 0 ? cell - 1 : kNoCell,
      ix + 1 < grid.nx() ? cell + 1 : kNoCell,
      iy > 0 ? cell - grid.nx() : kNoCell,
      iy + 1 < grid.ny() ? cell + grid.nx() : kNoCell,
  };
}

/// Multi-channel cell-centered field, stored channel-major: channel `k` of
/// cell `i` lives at `values[k * cells + i]`.
struct Field {
  Index channels = 0;
  std::vector<double> values;

  Field() = default;
  Field(Index channels, Index cells, double fill = 0.0) : channels(channels), values(channels * cells, fill) {}
  Field(Index channels, std::vector<double> values) : channels(channels), values(std::move(values)) {}

  [[nodiscard]] Index cells() const noexcept { return channels == 0 ? 0 : values.size() / channels; }
  [[nodiscard]] double& at(Index channel, Index cell) { return values[channel * cells() + cell]; }
  [[nodiscard]] double at(Index channel, Index cell) const { return values[channel * cells() + cell]; }
  [[nodiscard]] std::span<double> channel(Index k) { return {values.data() + k * cells(), cells()}; }
  [[nodiscard]] std::span<const double> channel(Index k) const { return {values.data() + k * cells(), cells()}; }

  void check(const Grid& grid, Index expected_channels) const {
    if (channels != expected_channels || values.size() != expected_channels * grid.cells()) {
      throw ShapeError("field has " + std::to_string(channels) + " channels / " + std::to_string(values.size()) +
                       " values, expected " + std::to_string(expected_channels) + " x " +
                       std::to_string(grid.cells()));
    }
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

/// Face-adjacency neighborhood of `cell` up to `layers` applications of the
/// face-neighbor relation (a Manhattan diamond), clipped at the boundary. The
/// cell itself is excluded; the result is sorted.
inline std::vector<Index> cell_neighbors(const Grid& grid, Index cell, int layers) {
  grid.check_cell(cell);
  if (layers < 1 || layers > 2) throw ConfigError("stencil layers must be 1 or 2");
  std::vector<Index> out;
  const auto cx = static_cast<long>(grid.ix(cell));
  const auto cy = static_cast<long>(grid.iy(cell));
  for (long dy = -layers; dy <= layers; ++dy) {
    for (long dx = -layers; dx <= layers; ++dx) {
      if ((dx == 0 && dy == 0) || std::labs(dx) + std::labs(dy) > layers) continue;
      const long x = cx + dx;
      const long y = cy + dy;
      if (x < 0 || y < 0 || x >= static_cast<long>(grid.nx()) || y >= static_cast<long>(grid.ny())) continue;
      out.push_back(grid.cell(static_cast<Index>(x), static_cast<Index>(y)));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

enum class Target { magic, halo };

/// Magic points plus the halo of stencil cells needed to evaluate residual
/// rows at them. Both index lists are sorted and unique.
class SubmeshProjector {
 public:
  SubmeshProjector(const Grid& grid, std::vector<Index> magic, std::vector<Index> halo, int layers)
      : grid_(grid), magic_(std::move(magic)), halo_(std::move(halo)), layers_(layers) {
    normalize(magic_);
    normalize(halo_);
    if (magic_.empty()) throw std::invalid_argument("submesh needs at least one magic point");
    for (Index c : halo_) grid_.check_cell(c);
    if (!std::includes(halo_.begin(), halo_.end(), magic_.begin(), magic_.end())) {
      throw ConfigError("magic points must be contained in the halo");
    }
    build_local_stencils();
  }

  [[nodiscard]] const Grid& grid() const noexcept { return grid_; }
  [[nodiscard]] const std::vector<Index>& magic_points() const noexcept { return magic_; }
  [[nodiscard]] const std::vector<Index>& halo() const noexcept { return halo_; }
  [[nodiscard]] const std::vector<Index>& cells(Target t) const noexcept {
    return t == Target::magic ? magic_ : halo_;
  }
  [[nodiscard]] int layers() const noexcept { return layers_; }
  [[nodiscard]] Index r_h() const noexcept { return magic_.size(); }
  [[nodiscard]] Index s_h() const noexcept { return halo_.size(); }

  /// Halo-local positions of a magic point and its face neighbors.
  /// `self` is always valid. A neighbor entry is `kNoCell` when the neighbor
  /// lies outside the grid and `kMissing` when it exists but is not in the halo.
  struct LocalStencil {
    Index self;
    std::array<Index, 4> neighbor;  // west, east, south, north
  };
  static constexpr Index kMissing = static_cast<Index>(-2);

  [[nodiscard]] const std::vector<LocalStencil>& local_stencils() const noexcept { return local_; }

  /// Position of each magic point inside the halo list.
  [[nodiscard]] Index halo_position(Index cell) const {
    auto it = std::lower_bound(halo_.begin(), halo_.end(), cell);
    if (it == halo_.end() || *it != cell) return kMissing;
    return static_cast<Index>(it - halo_.begin());
  }

  /// True when every magic point's stencil of the given depth lies inside the halo.
  [[nodiscard]] bool covers_stencils(int layers) const {
    for (Index m : magic_) {
      for (Index n : cell_neighbors(grid_, m, layers)) {
        if (!std::binary_search(halo_.begin(), halo_.end(), n)) return false;
      }
    }
    return true;
  }

 private:
  static void normalize(std::vector<Index>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  void build_local_stencils() {
    local_.clear();
    local_.reserve(magic_.size());
    for (Index m : magic_) {
      LocalStencil s{halo_position(m), {}};
      const auto nb = face_neighbors(grid_, m);
      for (int k = 0; k < 4; ++k) s.neighbor[k] = nb[k] == kNoCell ? kNoCell : halo_position(nb[k]);
      local_.push_back(s);
    }
  }

  Grid grid_;
  std::vector<Index> magic_;
  std::vector<Index> halo_;
  int layers_;
  std::vector<LocalStencil> local_;
};

/// Halo = magic points plus every stencil cell of depth `layers`.
inline SubmeshProjector build_submesh(const Grid& grid, std::span<const Index> magic_points, int layers) {
  if (magic_points.empty()) throw std::invalid_argument("build_submesh: empty magic point list");
  std::vector<Index> halo(magic_points.begin(), magic_points.end());
  for (Index m : magic_points) {
    auto nb = cell_neighbors(grid, m, layers);
    halo.insert(halo.end(), nb.begin(), nb.end());
  }
  return SubmeshProjector(grid, {magic_points.begin(), magic_points.end()}, std::move(halo), layers);
}

/// Gathers per-channel values at the selected cells, channel-major.
inline std::vector<double> restrict_field(std::span<const double> values, Index channels,
                                          const SubmeshProjector& proj, Target target) {
  const Index n = proj.grid().cells();
  if (values.size() != channels * n) {
    throw ShapeError("restrict: field length " + std::to_string(values.size()) + " != " +
                     std::to_string(channels * n));
  }
  const auto& sel = proj.cells(target);
  std::vector<double> out;
  out.reserve(channels * sel.size());
  for (Index k = 0; k < channels; ++k) {
    const double* base = values.data() + k * n;
    for (Index c : sel) out.push_back(base[c]);
  }
  return out;
}

inline std::vector<double> restrict_field(const Field& field, const SubmeshProjector& proj, Target target) {
  return restrict_field(field.values, field.channels, proj, target);
}

/// Zero-extension of restricted values back to a full field.
inline Field embed(std::span<const double> restricted, Index channels, const SubmeshProjector& proj, Target target) {
  const auto& sel = proj.cells(target);
  if (restricted.size() != channels * sel.size()) throw ShapeError("embed: restricted length mismatch");
  const Index n = proj.grid().cells();
  Field out(channels, n);
  for (Index k = 0; k < channels; ++k) {
    for (Index j = 0; j < sel.size(); ++j) out.values[k * n + sel[j]] = restricted[k * sel.size() + j];
  }
  return out;
}

}  // namespace nmrom
