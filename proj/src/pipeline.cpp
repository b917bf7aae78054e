#include "pcb_sentinel/pipeline.hpp"

#include <algorithm>
#include <functional>

#include <opencv2/imgproc.hpp>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

using nlohmann::json;

namespace {

constexpr std::size_t kMapBatch = 16;

void check_threshold(float t) {
  if (!(t >= 0.0f && t <= 1.0f)) throw ArgumentError("threshold must lie in [0, 1]");
}

}  // namespace

Reconstructor reconstructor_of(const ModelBundle& bundle) {
  return [&bundle](const nn::Tensor& x) { return bundle.model.reconstruct(x); };
}

std::vector<FloatMap> raw_maps(const Reconstructor& recon, const FeatureExtractor& fx,
                               std::span<const Raster> regions) {
  std::vector<FloatMap> out;
  out.reserve(regions.size());
  for (std::size_t i = 0; i < regions.size(); i += kMapBatch) {
    const auto part = regions.subspan(i, std::min(kMapBatch, regions.size() - i));
    const auto x = nn::from_rasters(part);
    const auto maps = anomaly_maps(fx, recon(x), x);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      out.push_back(resize_bilinear(maps[k], part[k].height(), part[k].width()));
    }
  }
  return out;
}

std::vector<FloatMap> raw_maps(const ModelBundle& bundle, const FeatureExtractor& fx,
                               std::span<const Raster> regions) {
  return raw_maps(reconstructor_of(bundle), fx, regions);
}

RegionVerdict make_verdict(std::string region_id, FloatMap normalized, float threshold) {
  check_threshold(threshold);
  RegionVerdict v;
  v.region_id = std::move(region_id);
  v.mask = binarize(normalized, threshold);
  v.anomaly_map = std::move(normalized);
  v.anomalous_pixels = v.mask.popcount();
  v.detected = v.anomalous_pixels >= kDetectionMinPixels;
  v.threshold = threshold;
  return v;
}

RegionVerdict infer_region(const ModelBundle& bundle, const FeatureExtractor& fx, const Raster& region,
                           float threshold) {
  check_threshold(threshold);
  if (!bundle.norm_range) throw UncalibratedModelError("region '" + bundle.region_id + "' has no calibration range");
  auto raw = raw_maps(bundle, fx, std::span<const Raster>(&region, 1));
  return make_verdict(bundle.region_id, normalize_with(raw.front(), *bundle.norm_range), threshold);
}

ValueRange calibration_range(std::span<const FloatMap> raw) {
  if (raw.empty()) throw ArgumentError("calibration needs at least one map");
  const auto r = global_range(raw);
  if (!(r.max > r.min)) throw DegenerateRangeError("all anomaly values are identical; cannot calibrate");
  return r;
}

ModelBundle calibrate(const ModelBundle& bundle, const FeatureExtractor& fx, std::span<const Raster> eval_set) {
  if (eval_set.empty()) throw ArgumentError("calibration set is empty");
  ModelBundle out = bundle;
  const auto raw = raw_maps(bundle, fx, eval_set);
  out.norm_range = calibration_range(raw);
  return out;
}

float detection_score(const FloatMap& normalized) {
  std::vector<float> v(normalized.values().begin(), normalized.values().end());
  if (v.size() < kDetectionMinPixels) return 0.0f;  // the rule can never fire
  std::nth_element(v.begin(), v.begin() + (kDetectionMinPixels - 1), v.end(), std::greater<>());
  return v[kDetectionMinPixels - 1];
}

// --- boards ------------------------------------------------------------------------------

BoardMaps compute_board_maps(const Raster& board, const BundleSet& models, const RegionGrid& grid,
                             const FeatureExtractor& fx, std::string board_id) {
  if (board.width() != grid.board_w || board.height() != grid.board_h) {
    throw ShapeMismatchError("board is " + std::to_string(board.width()) + "x" + std::to_string(board.height()) +
                             " but the grid expects " + std::to_string(grid.board_w) + "x" +
                             std::to_string(grid.board_h));
  }
  BoardMaps out;
  out.board_id = std::move(board_id);
  out.grid = grid;
  for (const auto& spec : grid.regions) {
    const auto it = models.find(spec.region_id);
    if (it == models.end()) throw MissingModelError("no model bundle for region '" + spec.region_id + "'");
    const ModelBundle& b = it->second;
    if (!b.norm_range) throw UncalibratedModelError("region '" + spec.region_id + "' has no calibration range");
    const auto region = extract_region(board, spec, b.config().input_side);
    auto raw = raw_maps(b, fx, std::span<const Raster>(&region, 1));
    out.maps.push_back(normalize_with(raw.front(), *b.norm_range));
    out.default_thresholds.push_back(b.threshold.value_or(kFallbackThreshold));
  }
  return out;
}

BoardReport threshold_board(const BoardMaps& maps, std::optional<float> threshold) {
  if (threshold) check_threshold(*threshold);
  BoardReport r;
  r.board_id = maps.board_id;
  r.board_w = maps.grid.board_w;
  r.board_h = maps.grid.board_h;
  r.board_mask = BinaryMask(r.board_h, r.board_w);
  for (std::size_t i = 0; i < maps.grid.regions.size(); ++i) {
    const auto& spec = maps.grid.regions[i];
    auto v = make_verdict(spec.region_id, maps.maps[i], threshold.value_or(maps.default_thresholds[i]));
    paint_region_mask(r.board_mask, v.mask, spec);
    r.any_detected = r.any_detected || v.detected;
    r.regions.push_back(std::move(v));
  }
  return r;
}

BoardReport infer_board(const Raster& board, const BundleSet& models, const RegionGrid& grid,
                        const FeatureExtractor& fx, std::optional<float> threshold, std::string board_id) {
  return threshold_board(compute_board_maps(board, models, grid, fx, std::move(board_id)), threshold);
}

json to_json(const BoardReport& report, const RegionGrid& grid) {
  json regions = json::array();
  for (const auto& v : report.regions) {
    const auto& spec = grid.find(v.region_id);
    regions.push_back({{"region_id", v.region_id},
                       {"x0", spec.x0},
                       {"y0", spec.y0},
                       {"side", spec.side},
                       {"threshold", v.threshold},
                       {"anomalous_pixels", v.anomalous_pixels},
                       {"detected", v.detected},
                       {"max_score", v.anomaly_map.max()},
                       {"detection_score", detection_score(v.anomaly_map)}});
  }
  return json{{"board_id", report.board_id},
              {"board_w", report.board_w},
              {"board_h", report.board_h},
              {"any_detected", report.any_detected},
              {"board_anomalous_pixels", report.board_mask.popcount()},
              {"min_detection_pixels", kDetectionMinPixels},
              {"regions", regions}};
}

Raster render_overlay(const Raster& board, const BinaryMask& board_mask) {
  if (board_mask.height() != board.height() || board_mask.width() != board.width()) {
    throw ShapeMismatchError("overlay mask does not match the board");
  }
  cv::Mat img = to_mat(to_rgb(board));
  cv::Mat m(board_mask.height(), board_mask.width(), CV_8UC1);
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) m.at<std::uint8_t>(y, x) = board_mask.at(y, x) ? 255 : 0;
  }
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(m, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
  const int thickness = std::max(1, std::max(img.cols, img.rows) / 512);
  cv::drawContours(img, contours, -1, cv::Scalar(0, 0, 255), thickness);  // BGR red
  return from_mat(img);
}

}  // namespace pcb_sentinel
