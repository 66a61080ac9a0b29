#pragma once

#include <array>
#include <string>

#include "nmrom/error.hpp"
#include "nmrom/grid.hpp"

namespace nmrom::fvm {

// Row kernels read cell values through a strided view: channel `k` of the
// entry at position `pos` is `data[k * stride + pos]`. Full-field evaluation
// uses cell ids as positions; submesh evaluation uses halo positions.
struct StridedView {
  const double* data;
  Index stride;
  [[nodiscard]] double operator()(Index channel, Index pos) const { return data[channel * stride + pos]; }
};

// Position of the cell itself and its west/east/south/north neighbors.
// `kNoCell` marks a boundary face.
struct RowStencil {
  Index self;
  std::array<Index, 4> nb;
};

inline RowStencil full_stencil(const Grid& grid, Index cell) { return {cell, face_neighbors(grid, cell)}; }

inline RowStencil halo_stencil(const SubmeshProjector::LocalStencil& s, Index magic_cell) {
  for (Index p : s.neighbor) {
    if (p == SubmeshProjector::kMissing) {
      throw ConfigError("halo does not cover the stencil of magic point " + std::to_string(magic_cell));
    }
  }
  return {s.self, s.neighbor};
}

// Face geometry in west, east, south, north order.
struct FaceGeometry {
  std::array<double, 4> area;
  std::array<double, 4> dist;         // center-to-center distance
  std::array<int, 4> axis;            // 0 = x, 1 = y
  std::array<double, 4> sign;         // outward normal sign along axis
};

inline FaceGeometry face_geometry(const Grid& g) {
  return {{g.hy(), g.hy(), g.hx(), g.hx()}, {g.hx(), g.hx(), g.hy(), g.hy()}, {0, 0, 1, 1}, {-1.0, 1.0, -1.0, 1.0}};
}

// Diagonal plus one coefficient per face neighbor.
struct RowCoefficients {
  double diag = 0.0;
  std::array<double, 4> off{};
};

// Applies a row to one channel of a strided state, in fixed summation order.
inline double apply_row(const RowCoefficients& c, const StridedView& v, Index channel, const RowStencil& s) {
  double acc = c.diag * v(channel, s.self);
  for (int f = 0; f < 4; ++f) {
    if (s.nb[f] != kNoCell) acc += c.off[f] * v(channel, s.nb[f]);
  }
  return acc;
}

}  // namespace nmrom::fvm
