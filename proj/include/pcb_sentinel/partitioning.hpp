#pragma once

#include <string>
#include <vector>

#include "pcb_sentinel/imaging.hpp"

namespace pcb_sentinel {

/// One square region of a board, addressed as "grid{col}_{row}" (1-based).
struct RegionSpec {
  std::string region_id;
  int x0 = 0;
  int y0 = 0;
  int side = 1024;
  int column = 1;
  int row = 1;

  friend bool operator==(const RegionSpec&, const RegionSpec&) = default;
};

struct RegionGrid {
  int board_w = 0;
  int board_h = 0;
  int side = 0;
  std::vector<RegionSpec> regions;  // column-major: grid1_1, grid1_2, ..., grid2_1, ...

  const RegionSpec& find(const std::string& region_id) const;
};

std::string region_name(int column, int row);

/// Anchors along an axis of length L are 0, side, 2*side, ... while they fit;
/// when L is not a multiple of side a last anchor sits at L - side.
std::vector<int> axis_anchors(int length, int side);

RegionGrid build_grid(int board_w, int board_h, int side);

/// Crop of `spec` resampled to out_side x out_side with bilinear filtering.
/// (dx, dy) shifts the crop window, clamped to the board; used for
/// registration-jitter augmentation.
Raster extract_region(const Raster& board, const RegionSpec& spec, int out_side = 256, int dx = 0, int dy = 0);

/// Nearest-neighbour upscale of a region mask to side x side, OR-ed into `board`.
void paint_region_mask(BinaryMask& board, const BinaryMask& region_mask, const RegionSpec& spec);

/// Board-sized mask holding only this region's contribution.
BinaryMask mask_to_board(const BinaryMask& region_mask, const RegionSpec& spec, int board_w, int board_h);

}  // namespace pcb_sentinel
