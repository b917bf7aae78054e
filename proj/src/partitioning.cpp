#include "pcb_sentinel/partitioning.hpp"

#include <algorithm>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

const RegionSpec& RegionGrid::find(const std::string& region_id) const {
  for (const auto& r : regions) {
    if (r.region_id == region_id) return r;
  }
  throw ArgumentError("unknown region " + region_id);
}

std::string region_name(int column, int row) {
  return "grid" + std::to_string(column) + "_" + std::to_string(row);
}

std::vector<int> axis_anchors(int length, int side) {
  if (side <= 0) throw ArgumentError("region side must be positive");
  if (length < side) {
    throw ArgumentError("board dimension " + std::to_string(length) + " smaller than region side " +
                        std::to_string(side));
  }
  std::vector<int> anchors;
  for (int a = 0; a + side <= length; a += side) anchors.push_back(a);
  if (length % side != 0) anchors.push_back(length - side);
  return anchors;
}

RegionGrid build_grid(int board_w, int board_h, int side) {
  RegionGrid grid{board_w, board_h, side, {}};
  const auto xs = axis_anchors(board_w, side);
  const auto ys = axis_anchors(board_h, side);
  for (std::size_t c = 0; c < xs.size(); ++c) {
    for (std::size_t r = 0; r < ys.size(); ++r) {
      const int col = static_cast<int>(c) + 1, row = static_cast<int>(r) + 1;
      grid.regions.push_back({region_name(col, row), xs[c], ys[r], side, col, row});
    }
  }
  return grid;
}

Raster extract_region(const Raster& board, const RegionSpec& spec, int out_side, int dx, int dy) {
  if (out_side <= 0) throw ArgumentError("out_side must be positive");
  if (spec.x0 < 0 || spec.y0 < 0 || spec.x0 + spec.side > board.width() || spec.y0 + spec.side > board.height()) {
    throw ArgumentError("region " + spec.region_id + " lies outside the " + std::to_string(board.width()) + "x" +
                        std::to_string(board.height()) + " board");
  }
  const int x0 = std::clamp(spec.x0 + dx, 0, board.width() - spec.side);
  const int y0 = std::clamp(spec.y0 + dy, 0, board.height() - spec.side);
  Raster crop(spec.side, spec.side, board.color_space());
  const int c = board.channels();
  auto src = board.pixels();
  auto dst = crop.pixels();
  for (int y = 0; y < spec.side; ++y) {
    const auto* row = src.data() + (static_cast<std::size_t>(y0 + y) * board.width() + x0) * c;
    std::copy(row, row + static_cast<std::size_t>(spec.side) * c,
              dst.data() + static_cast<std::size_t>(y) * spec.side * c);
  }
  return resize_bilinear(crop, out_side, out_side);
}

void paint_region_mask(BinaryMask& board, const BinaryMask& region_mask, const RegionSpec& spec) {
  if (spec.x0 < 0 || spec.y0 < 0 || spec.x0 + spec.side > board.width() || spec.y0 + spec.side > board.height()) {
    throw ArgumentError("region " + spec.region_id + " lies outside the board mask");
  }
  const BinaryMask up = resize_nearest(region_mask, spec.side, spec.side);
  for (int y = 0; y < spec.side; ++y) {
    for (int x = 0; x < spec.side; ++x) {
      if (up.at(y, x)) board.set(spec.y0 + y, spec.x0 + x, true);
    }
  }
}

BinaryMask mask_to_board(const BinaryMask& region_mask, const RegionSpec& spec, int board_w, int board_h) {
  BinaryMask board(board_h, board_w);
  paint_region_mask(board, region_mask, spec);
  return board;
}

}  // namespace pcb_sentinel
