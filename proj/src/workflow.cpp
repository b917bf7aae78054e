#include "pcb_sentinel/workflow.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Whole test boards held in memory at once while computing maps.
constexpr std::size_t kBoardChunkBytes = std::size_t{256} << 20;
constexpr std::size_t kPreloadBytes = std::size_t{1} << 30;

std::size_t board_bytes(const DatasetManifest& m) {
  return static_cast<std::size_t>(m.image_w) * m.image_h * 3 * sizeof(float);
}

std::vector<RegionSpec> selected(const RegionGrid& grid, const std::optional<std::string>& region) {
  if (!region) return grid.regions;
  return {grid.find(*region)};
}

// Raw maps and truths of every test image, per selected region.
struct TestMaps {
  std::vector<RegionSpec> specs;
  std::vector<std::vector<FloatMap>> raw;
  std::vector<std::vector<BinaryMask>> truths;
};

TestMaps test_maps(const AppConfig& config, const FeatureExtractor& fx, const DatasetManifest& m,
                   const RegionGrid& grid, const BundleSet& bundles, const std::optional<std::string>& region) {
  TestMaps out;
  out.specs = selected(grid, region);
  out.raw.resize(out.specs.size());
  out.truths.resize(out.specs.size());
  if (m.test.empty()) throw EmptyDatasetError("the test split is empty");
  const std::size_t chunk = std::max<std::size_t>(1, std::min<std::size_t>(16, kBoardChunkBytes / board_bytes(m)));
  const int side = config.grid.out_side;
  for (std::size_t i = 0; i < m.test.size(); i += chunk) {
    const std::size_t end = std::min(m.test.size(), i + chunk);
    std::vector<Raster> boards;
    std::vector<BinaryMask> masks;
    for (std::size_t k = i; k < end; ++k) {
      boards.push_back(load_raster(m.test[k].image));
      if (boards.back().width() != grid.board_w || boards.back().height() != grid.board_h) {
        throw ShapeMismatchError(m.test[k].image.string() + " does not match the trained board size");
      }
      masks.push_back(m.test[k].mask ? load_mask(*m.test[k].mask) : BinaryMask(grid.board_h, grid.board_w));
      if (masks.back().width() != grid.board_w || masks.back().height() != grid.board_h) {
        throw MaskMismatchError("mask size differs from its image: " + m.test[k].image.string());
      }
    }
    for (std::size_t r = 0; r < out.specs.size(); ++r) {
      const auto& spec = out.specs[r];
      std::vector<Raster> crops;
      for (std::size_t k = 0; k < boards.size(); ++k) {
        crops.push_back(extract_region(boards[k], spec, side));
        out.truths[r].push_back(region_truth(masks[k], spec, side));
      }
      auto maps = raw_maps(bundles.at(spec.region_id), fx, crops);
      for (auto& mp : maps) out.raw[r].push_back(std::move(mp));
    }
  }
  return out;
}

BundleSet bundles_for(const fs::path& models_dir, const RegionGrid& grid, const std::vector<RegionSpec>& specs) {
  RegionGrid sub = grid;
  sub.regions = specs;
  return load_bundles(models_dir, sub);
}

}  // namespace

FeatureExtractor make_extractor(const AppConfig& config) {
  return FeatureExtractor::from_cache(config.cache_dir, config.loss_layers, config.anomaly_layer);
}

RegionGrid configured_grid(const AppConfig& config, int board_w, int board_h) {
  RegionGrid grid = build_grid(board_w, board_h, config.grid.side);
  if (config.regions.empty()) return grid;
  std::vector<RegionSpec> keep;
  for (const auto& id : config.regions) keep.push_back(grid.find(id));
  grid.regions = std::move(keep);
  return grid;
}

void save_grid(const RegionGrid& grid, int out_side, const fs::path& models_dir) {
  fs::create_directories(models_dir);
  json ids = json::array();
  for (const auto& r : grid.regions) ids.push_back(r.region_id);
  std::ofstream out(models_dir / "grid.json");
  if (!out) throw IOError("cannot write " + (models_dir / "grid.json").string());
  out << json{{"board_w", grid.board_w}, {"board_h", grid.board_h}, {"side", grid.side}, {"out_side", out_side},
              {"regions", ids}}
             .dump(2)
      << '\n';
}

RegionGrid load_grid(const fs::path& models_dir) {
  const auto path = models_dir / "grid.json";
  std::ifstream in(path);
  if (!in) throw MissingModelError("no trained models: " + path.string() + " not found");
  try {
    const json j = json::parse(in);
    RegionGrid grid = build_grid(j.at("board_w"), j.at("board_h"), j.at("side"));
    if (j.contains("regions")) {
      std::vector<RegionSpec> keep;
      for (const auto& id : j["regions"]) keep.push_back(grid.find(id.get<std::string>()));
      grid.regions = std::move(keep);
    }
    return grid;
  } catch (const json::exception& e) {
    throw FormatError("malformed " + path.string() + ": " + e.what());
  }
}

BundleSet load_bundles(const fs::path& models_dir, const RegionGrid& grid) {
  BundleSet out;
  for (const auto& spec : grid.regions) {
    const auto dir = models_dir / spec.region_id;
    if (!fs::is_regular_file(dir / "manifest.json")) {
      throw MissingModelError("no model bundle for region '" + spec.region_id + "' under " + models_dir.string());
    }
    out.emplace(spec.region_id, load_bundle(dir));
  }
  return out;
}

BinaryMask region_truth(const BinaryMask& board_mask, const RegionSpec& spec, int out_side) {
  BinaryMask crop(spec.side, spec.side);
  for (int y = 0; y < spec.side; ++y) {
    for (int x = 0; x < spec.side; ++x) crop.set(y, x, board_mask.at(spec.y0 + y, spec.x0 + x) != 0);
  }
  return out_side == spec.side ? crop : resize_nearest(crop, out_side, out_side);
}

std::vector<TrainedRegion> train_all(const AppConfig& config, const FeatureExtractor& fx,
                                     const std::optional<std::string>& region, std::ostream* progress) {
  const auto m = load_manifest(config.dataset_root, config.dataset_kind, config.split_seed);
  const RegionGrid grid = configured_grid(config, m.image_w, m.image_h);
  const auto specs = selected(grid, region);
  const bool preload = board_bytes(m) * (m.train.size() + m.val.size()) <= kPreloadBytes;
  save_grid(grid, config.grid.out_side, config.models_dir);

  std::vector<TrainedRegion> out;
  for (const auto& spec : specs) {
    BoardRegionSampler train(m.train, spec, config.grid.out_side, config.train.augmentation.max_offset_px, preload);
    BoardRegionSampler val(m.val, spec, config.grid.out_side, 0, preload);
    const auto dir = config.models_dir / spec.region_id;
    fs::create_directories(dir);
    std::ofstream log(dir / "train_log.ndjson");
    if (!log) throw IOError("cannot write " + (dir / "train_log.ndjson").string());

    TrainOptions opts;
    opts.region_id = spec.region_id;
    opts.log = &log;
    if (progress) {
      opts.on_epoch = [&](const EpochRecord& r) {
        *progress << spec.region_id << " epoch " << r.epoch << "/" << config.train.epochs << " train "
                  << r.train_loss << " val " << r.val_loss << " lr " << r.lr << '\n'
                  << std::flush;
      };
    }
    ModelBundle bundle =
        train_region(train, val.size() ? &val : nullptr, config.model, config.train, fx, opts);
    out.push_back({spec.region_id, save_bundle(bundle, config.models_dir), bundle.train_manifest});
  }
  return out;
}

std::vector<std::string> calibrate_all(const AppConfig& config, const FeatureExtractor& fx,
                                       const std::optional<std::string>& region) {
  const RegionGrid grid = load_grid(config.models_dir);
  const auto specs = selected(grid, region);
  BundleSet bundles = bundles_for(config.models_dir, grid, specs);
  const auto m = load_manifest(config.dataset_root, config.dataset_kind, config.split_seed);
  const auto maps = test_maps(config, fx, m, grid, bundles, region);
  std::vector<std::string> done;
  for (std::size_t r = 0; r < maps.specs.size(); ++r) {
    auto& b = bundles.at(maps.specs[r].region_id);
    b.norm_range = calibration_range(maps.raw[r]);
    save_bundle(b, config.models_dir);
    done.push_back(b.region_id);
  }
  return done;
}

EvalReport evaluate_all(const AppConfig& config, const FeatureExtractor& fx, bool calibrate_first,
                        const std::optional<std::string>& region) {
  const RegionGrid grid = load_grid(config.models_dir);
  const auto specs = selected(grid, region);
  BundleSet bundles = bundles_for(config.models_dir, grid, specs);
  if (!calibrate_first) {
    for (const auto& [id, b] : bundles) {
      if (!b.norm_range) {
        throw UncalibratedModelError("region '" + id + "' is not calibrated; run calibrate or evaluate --calibrate");
      }
    }
  }
  const auto m = load_manifest(config.dataset_root, config.dataset_kind, config.split_seed);
  const auto maps = test_maps(config, fx, m, grid, bundles, region);

  std::vector<RegionEvalInput> inputs;
  for (std::size_t r = 0; r < maps.specs.size(); ++r) {
    auto& b = bundles.at(maps.specs[r].region_id);
    if (calibrate_first) b.norm_range = calibration_range(maps.raw[r]);
    RegionEvalInput in;
    in.region_id = b.region_id;
    for (const auto& raw : maps.raw[r]) in.maps.push_back(normalize_with(raw, *b.norm_range));
    in.truths = maps.truths[r];
    inputs.push_back(std::move(in));
  }
  EvalReport report = evaluate_regions(inputs, config.evaluation.n_thresholds);
  write_report(report, config.evaluation.output_dir);
  for (const auto& rm : report.regions) {
    auto& b = bundles.at(rm.region_id);
    if (rm.best_threshold) b.threshold = *rm.best_threshold;
    save_bundle(b, config.models_dir);
  }
  return report;
}

// --- runtime -----------------------------------------------------------------------------

Runtime::Runtime(AppConfig config) : Runtime(config, make_extractor(config)) {}

Runtime::Runtime(AppConfig config, FeatureExtractor fx) : config_(std::move(config)), fx_(std::move(fx)) { load(); }

void Runtime::load() {
  grid_ = load_grid(config_.models_dir);
  bundles_ = load_bundles(config_.models_dir, grid_);
  for (const auto& [id, b] : bundles_) {
    if (!b.norm_range) throw UncalibratedModelError("region '" + id + "' is not calibrated");
  }
  if (config_.registration.enabled) {
    if (config_.registration.reference.empty()) throw ArgumentError("registration enabled without a reference image");
    reference_ = load_raster(config_.registration.reference);
    if (reference_->width() != grid_.board_w || reference_->height() != grid_.board_h) {
      throw ShapeMismatchError("reference image does not match the trained board size");
    }
  }
}

Runtime::Analysis Runtime::analyze(const Raster& image, std::string board_id) const {
  Analysis a;
  if (reference_) {
    auto reg = register_image(image, *reference_, config_.registration.config);
    a.registration = json{{"inlier_count", reg.inlier_count},
                          {"inlier_ratio", reg.inlier_ratio},
                          {"mean_reprojection_error", reg.mean_reprojection_error}};
    a.board = std::move(reg.warped);
  } else {
    a.board = image;
  }
  a.maps = compute_board_maps(a.board, bundles_, grid_, fx_, std::move(board_id));
  return a;
}

json write_inference(const Runtime::Analysis& analysis, const BoardReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir / "maps");
  json j = to_json(report, analysis.maps.grid);
  j["registration"] = analysis.registration;
  save_raster(out_dir / "overlay.png", render_overlay(analysis.board, report.board_mask));
  for (const auto& v : report.regions) write_float_map(out_dir / "maps" / (v.region_id + ".amap"), v.anomaly_map);
  std::ofstream out(out_dir / "report.json");
  if (!out) throw IOError("cannot write " + (out_dir / "report.json").string());
  out << j.dump(2) << '\n';
  return j;
}

}  // namespace pcb_sentinel
