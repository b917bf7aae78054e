#include <gtest/gtest.h>

#include <set>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/partitioning.hpp"
#include "support.hpp"

using namespace pcb_sentinel;

TEST(Grid, MpiGeometryHasTwelveRegions) {
  const auto g = build_grid(4096, 2816, 1024);
  ASSERT_EQ(g.regions.size(), 12u);
  std::set<int> xs, ys;
  for (const auto& r : g.regions) {
    xs.insert(r.x0);
    ys.insert(r.y0);
    EXPECT_EQ(r.side, 1024);
    EXPECT_EQ(r.region_id, "grid" + std::to_string(r.column) + "_" + std::to_string(r.row));
  }
  EXPECT_EQ(xs, (std::set<int>{0, 1024, 2048, 3072}));
  EXPECT_EQ(ys, (std::set<int>{0, 1024, 1792}));
  // column-major ordering
  EXPECT_EQ(g.regions[0].region_id, "grid1_1");
  EXPECT_EQ(g.regions[1].region_id, "grid1_2");
  EXPECT_EQ(g.regions[3].region_id, "grid2_1");
  EXPECT_EQ(g.regions.back().region_id, "grid4_3");
  EXPECT_EQ(g.find("grid2_2").x0, 1024);
  EXPECT_EQ(g.find("grid4_3").y0, 1792);
  EXPECT_THROW(g.find("grid5_1"), ArgumentError);
}

TEST(Grid, ExactDivisionAndTrailingAnchor) {
  const auto g = build_grid(2048, 2048, 1024);
  EXPECT_EQ(g.regions.size(), 4u);
  EXPECT_EQ(axis_anchors(2500, 1024), (std::vector<int>{0, 1024, 1476}));
  const auto h = build_grid(2500, 1024, 1024);
  ASSERT_EQ(h.regions.size(), 3u);
  EXPECT_EQ(h.regions[2].x0, 1476);
  EXPECT_EQ(axis_anchors(1024, 1024), (std::vector<int>{0}));
}

TEST(Grid, BoardSmallerThanSide) {
  EXPECT_THROW(build_grid(1000, 2048, 1024), ArgumentError);
  EXPECT_THROW(build_grid(2048, 1023, 1024), ArgumentError);
  EXPECT_THROW(build_grid(64, 64, 0), ArgumentError);
}

// Property: anchors stay in bounds and the union covers every pixel, for many shapes.
TEST(Grid, CoverageProperty) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> side_d(4, 40), extra(0, 90);
  for (int t = 0; t < 200; ++t) {
    const int side = side_d(rng), w = side + extra(rng), h = side + extra(rng);
    const auto g = build_grid(w, h, side);
    std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
    for (const auto& r : g.regions) {
      ASSERT_GE(r.x0, 0);
      ASSERT_LE(r.x0, w - side);
      ASSERT_GE(r.y0, 0);
      ASSERT_LE(r.y0, h - side);
      for (int y = r.y0; y < r.y0 + side; ++y) {
        for (int x = r.x0; x < r.x0 + side; ++x) cover[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
    for (int c : cover) ASSERT_EQ(c, 1) << w << "x" << h << " side " << side;
    const int nx = (w + side - 1) / side, ny = (h + side - 1) / side;
    EXPECT_EQ(static_cast<int>(g.regions.size()), nx * ny);
  }
}

TEST(Extract, ConstantAndLocal) {
  const Raster flat(128, 128, ColorSpace::Rgb, 0.3f);
  const RegionSpec spec{"grid1_1", 32, 32, 64, 1, 1};
  const auto r = extract_region(flat, spec, 16);
  EXPECT_EQ(r.height(), 16);
  for (float v : r.pixels()) EXPECT_NEAR(v, 0.3f, 1e-6);

  Raster dark(128, 128, ColorSpace::Gray, 0.0f);
  dark.at(32, 32) = 1.0f;
  const auto local = extract_region(dark, spec, 64);
  EXPECT_EQ(local.at(0, 0), 1.0f);
  float rest = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) rest += (y || x) ? local.at(y, x) : 0.0f;
  }
  EXPECT_EQ(rest, 0.0f);
}

TEST(Extract, ScaleFactorFour) {
  // A 4x4 block aligned to the sampling lattice lands on exactly one output pixel.
  Raster board(1024, 1024, ColorSpace::Gray, 0.0f);
  const int by = 4 * 37, bx = 4 * 101;
  for (int y = by; y < by + 4; ++y) {
    for (int x = bx; x < bx + 4; ++x) board.at(y, x) = 1.0f;
  }
  const auto g = build_grid(1024, 1024, 1024);
  const auto r = extract_region(board, g.regions[0], 256);
  EXPECT_NEAR(r.at(37, 101), 1.0f, 1e-6);
  double total = 0;
  for (float v : r.pixels()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Extract, DeterministicAndBounds) {
  const auto board = testing_support::random_raster(96, 80, 5);
  const auto g = build_grid(80, 96, 32);
  for (const auto& spec : g.regions) EXPECT_EQ(extract_region(board, spec, 16), extract_region(board, spec, 16));
  const RegionSpec outside{"gridX", 60, 0, 32, 9, 1};
  EXPECT_THROW(extract_region(board, outside, 16), ArgumentError);
  EXPECT_THROW(extract_region(board, g.regions[0], 0), ArgumentError);
  // Shifted windows are clamped to the board.
  const auto shifted = extract_region(board, g.regions[0], 32, -10, -10);
  EXPECT_EQ(shifted, extract_region(board, g.regions[0], 32));
}

TEST(MaskToBoard, PlacementAndUnion) {
  const RegionSpec a{"grid1_1", 0, 0, 1024, 1, 1};
  EXPECT_EQ(mask_to_board(BinaryMask(256, 256, 0), a, 2048, 1280).popcount(), 0u);
  EXPECT_EQ(mask_to_board(BinaryMask(256, 256, 1), a, 2048, 1280).popcount(), 1024u * 1024u);

  // Two overlapping regions both marking the shared strip.
  const auto g = build_grid(40, 16, 16);  // x anchors 0, 16, 24
  const auto& r2 = g.regions[1];
  const auto& r3 = g.regions[2];
  ASSERT_EQ(r3.x0, 24);
  BinaryMask m2(8, 8), m3(8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 4; x < 8; ++x) m2.set(y, x, true);  // board x 24..31
    for (int x = 0; x < 4; ++x) m3.set(y, x, true);  // board x 24..31
  }
  BinaryMask board(16, 40);
  paint_region_mask(board, m2, r2);
  paint_region_mask(board, m3, r3);
  std::set<std::pair<int, int>> expected;
  for (int y = 0; y < 16; ++y) {
    for (int x = 24; x < 32; ++x) expected.insert({y, x});
  }
  std::set<std::pair<int, int>> got;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 40; ++x) {
      if (board.at(y, x)) got.insert({y, x});
    }
  }
  EXPECT_EQ(got, expected);
  EXPECT_EQ(board.popcount(), expected.size());
  EXPECT_THROW(paint_region_mask(board, m2, RegionSpec{"x", 30, 0, 16, 1, 1}), ArgumentError);
}
