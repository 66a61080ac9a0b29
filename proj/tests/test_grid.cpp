#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "nmrom/grid.hpp"

namespace nmrom {
namespace {

TEST(CellNeighbors, InteriorCellHasFourFaceNeighbors) {
  Grid g(6, 6);
  auto nb = cell_neighbors(g, g.cell(2, 3), 1);
  EXPECT_EQ(nb.size(), 4u);
  EXPECT_EQ(nb, (std::vector<Index>{g.cell(2, 2), g.cell(1, 3), g.cell(3, 3), g.cell(2, 4)}));
}

TEST(CellNeighbors, CornerAndEdgeCounts) {
  Grid g(6, 6);
  EXPECT_EQ(cell_neighbors(g, g.cell(0, 0), 1).size(), 2u);
  EXPECT_EQ(cell_neighbors(g, g.cell(5, 5), 1).size(), 2u);
  EXPECT_EQ(cell_neighbors(g, g.cell(3, 0), 1).size(), 3u);
  EXPECT_EQ(cell_neighbors(g, g.cell(0, 2), 1).size(), 3u);
}

TEST(CellNeighbors, TwoLayersIsADiamondOfTwelve) {
  Grid g(7, 7);
  auto nb = cell_neighbors(g, g.cell(3, 3), 2);
  EXPECT_EQ(nb.size(), 12u);
  // Diagonal corners of the 5x5 box are excluded.
  EXPECT_FALSE(std::binary_search(nb.begin(), nb.end(), g.cell(1, 1)));
  EXPECT_TRUE(std::binary_search(nb.begin(), nb.end(), g.cell(2, 2)));
  EXPECT_TRUE(std::binary_search(nb.begin(), nb.end(), g.cell(5, 3)));
}

TEST(CellNeighbors, CountsHoldForEveryCell) {
  Grid g(9, 5);
  for (Index c = 0; c < g.cells(); ++c) {
    const bool edge_x = g.ix(c) == 0 || g.ix(c) == g.nx() - 1;
    const bool edge_y = g.iy(c) == 0 || g.iy(c) == g.ny() - 1;
    const std::size_t expected = 4 - (edge_x ? 1 : 0) - (edge_y ? 1 : 0);
    EXPECT_EQ(cell_neighbors(g, c, 1).size(), expected) << "cell " << c;
  }
}

TEST(CellNeighbors, OutOfRangeCellThrows) {
  Grid g(6, 6);
  EXPECT_THROW(cell_neighbors(g, 36, 1), std::out_of_range);
  EXPECT_THROW(cell_neighbors(g, 0, 3), ConfigError);
}

TEST(Grid, RejectsTinyGrids) { EXPECT_THROW(Grid(2, 5), ConfigError); }

TEST(BuildSubmesh, SingleInteriorPoint) {
  Grid g(6, 6);
  std::vector<Index> mp{g.cell(2, 2)};
  auto proj = build_submesh(g, mp, 1);
  EXPECT_EQ(proj.s_h(), 5u);
  EXPECT_EQ(proj.r_h(), 1u);
}

TEST(BuildSubmesh, AdjacentPointsOverlap) {
  Grid g(6, 6);
  std::vector<Index> mp{g.cell(2, 2), g.cell(3, 2)};
  // Each has a 5-cell cross; they share each other -> 10 - 2 = 8.
  EXPECT_EQ(build_submesh(g, mp, 1).s_h(), 8u);
}

TEST(BuildSubmesh, AllCellsSaturate) {
  Grid g(5, 4);
  std::vector<Index> all(g.cells());
  std::iota(all.begin(), all.end(), Index{0});
  auto proj = build_submesh(g, all, 2);
  EXPECT_EQ(proj.s_h(), g.cells());
  EXPECT_EQ(proj.halo(), all);
}

TEST(BuildSubmesh, EmptyListThrows) {
  Grid g(6, 6);
  std::vector<Index> none;
  EXPECT_THROW(build_submesh(g, none, 1), std::invalid_argument);
}

TEST(BuildSubmesh, MonotoneInMagicPoints) {
  Grid g(10, 8);
  std::mt19937 rng(7);
  std::uniform_int_distribution<Index> pick(0, g.cells() - 1);
  for (int layers : {1, 2}) {
    std::vector<Index> mp{pick(rng)};
    std::size_t prev = build_submesh(g, mp, layers).s_h();
    for (int k = 0; k < 20; ++k) {
      mp.push_back(pick(rng));
      const auto proj = build_submesh(g, mp, layers);
      EXPECT_GE(proj.s_h(), prev);
      EXPECT_TRUE(proj.covers_stencils(layers));
      prev = proj.s_h();
    }
  }
}

TEST(Restrict, ConstantFieldGivesOnes) {
  Grid g(6, 6);
  Field f(2, g.cells(), 1.0);
  std::vector<Index> mp{3, 17, 30};
  auto proj = build_submesh(g, mp, 1);
  auto r = restrict_field(f, proj, Target::magic);
  EXPECT_EQ(r, std::vector<double>(6, 1.0));
}

TEST(Restrict, MatchesDirectGather) {
  Grid g(6, 6);
  std::mt19937 rng(1);
  std::normal_distribution<double> nd;
  Field f(3, g.cells());
  for (auto& v : f.values) v = nd(rng);
  std::vector<Index> mp{30, 7, 14};
  auto proj = build_submesh(g, mp, 2);
  for (Target t : {Target::magic, Target::halo}) {
    const auto& cells = proj.cells(t);
    auto r = restrict_field(f, proj, t);
    ASSERT_EQ(r.size(), 3 * cells.size());
    std::size_t pos = 0;
    for (Index k = 0; k < 3; ++k)
      for (Index c : cells) EXPECT_EQ(r[pos++], f.values[k * g.cells() + c]);
  }
}

TEST(Restrict, EmbedThenRestrictIsIdentity) {
  Grid g(7, 5);
  std::vector<Index> mp{4, 12, 33};
  auto proj = build_submesh(g, mp, 1);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(2 * proj.s_h());
  for (auto& x : v) x = u(rng);
  auto full = embed(v, 2, proj, Target::halo);
  EXPECT_EQ(restrict_field(full, proj, Target::halo), v);
  // Restrict, zero-extend, restrict again: idempotent.
  auto once = restrict_field(full, proj, Target::magic);
  auto twice = restrict_field(embed(once, 2, proj, Target::magic), proj, Target::magic);
  EXPECT_EQ(once, twice);
}

TEST(Restrict, LengthMismatchThrows) {
  Grid g(6, 6);
  std::vector<Index> mp{3};
  auto proj = build_submesh(g, mp, 1);
  std::vector<double> bad(10);
  EXPECT_THROW(restrict_field(bad, 2, proj, Target::magic), ShapeError);
}

TEST(SubmeshProjector, LocalStencilsPointIntoHalo) {
  Grid g(6, 6);
  std::vector<Index> mp{0, 14};
  auto proj = build_submesh(g, mp, 1);
  const auto& local = proj.local_stencils();
  ASSERT_EQ(local.size(), 2u);
  EXPECT_EQ(proj.halo()[local[0].self], 0u);
  EXPECT_EQ(local[0].neighbor[0], kNoCell);  // west of corner
  EXPECT_EQ(local[0].neighbor[2], kNoCell);  // south of corner
  EXPECT_EQ(proj.halo()[local[1].neighbor[1]], 15u);
}

}  // namespace
}  // namespace nmrom
