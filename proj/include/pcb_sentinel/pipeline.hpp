#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb_sentinel/cae.hpp"
#include "pcb_sentinel/partitioning.hpp"
#include "pcb_sentinel/perceptual.hpp"

namespace pcb_sentinel {

/// A region is reported as modified when at least this many pixels pass T.
inline constexpr std::size_t kDetectionMinPixels = 10;
/// Used when neither the caller nor the bundle supplies a threshold.
inline constexpr float kFallbackThreshold = 0.5f;

struct RegionVerdict {
  std::string region_id;
  FloatMap anomaly_map;  // normalized, region-input sized
  BinaryMask mask;
  std::size_t anomalous_pixels = 0;
  bool detected = false;
  float threshold = 0.0f;
};

/// Maps a batch of region images to their reconstructions.
using Reconstructor = std::function<nn::Tensor(const nn::Tensor&)>;
Reconstructor reconstructor_of(const ModelBundle& bundle);

/// Unnormalized anomaly maps, bilinearly resized to the region size.
std::vector<FloatMap> raw_maps(const Reconstructor& recon, const FeatureExtractor& fx, std::span<const Raster> regions);
std::vector<FloatMap> raw_maps(const ModelBundle& bundle, const FeatureExtractor& fx, std::span<const Raster> regions);

/// Binarizes a normalized map at T and applies the pixel-count rule.
RegionVerdict make_verdict(std::string region_id, FloatMap normalized, float threshold);

RegionVerdict infer_region(const ModelBundle& bundle, const FeatureExtractor& fx, const Raster& region,
                           float threshold);

/// Global (min, max) over raw maps; DegenerateRangeError when flat.
ValueRange calibration_range(std::span<const FloatMap> raw);
ModelBundle calibrate(const ModelBundle& bundle, const FeatureExtractor& fx, std::span<const Raster> eval_set);

/// The 10th-largest value of a map: score >= T exactly when >= 10 pixels pass T.
float detection_score(const FloatMap& normalized);

// --- whole boards --------------------------------------------------------------------

struct BoardReport {
  std::string board_id;
  int board_w = 0;
  int board_h = 0;
  std::vector<RegionVerdict> regions;
  BinaryMask board_mask;
  bool any_detected = false;
};

/// Per-region normalized maps of one board; thresholding them is cheap.
struct BoardMaps {
  std::string board_id;
  RegionGrid grid;
  std::vector<FloatMap> maps;                // parallel to grid.regions
  std::vector<float> default_thresholds;     // per region
};

using BundleSet = std::map<std::string, ModelBundle>;

BoardMaps compute_board_maps(const Raster& board, const BundleSet& models, const RegionGrid& grid,
                             const FeatureExtractor& fx, std::string board_id);
/// Re-binarizes cached maps; no threshold means each region's default.
BoardReport threshold_board(const BoardMaps& maps, std::optional<float> threshold);
BoardReport infer_board(const Raster& board, const BundleSet& models, const RegionGrid& grid,
                        const FeatureExtractor& fx, std::optional<float> threshold, std::string board_id = "board");

nlohmann::json to_json(const BoardReport& report, const RegionGrid& grid);

/// Board with red contours around marked pixels.
Raster render_overlay(const Raster& board, const BinaryMask& board_mask);

}  // namespace pcb_sentinel
