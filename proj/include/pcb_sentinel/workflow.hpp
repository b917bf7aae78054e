#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb_sentinel/config.hpp"
#include "pcb_sentinel/evaluation.hpp"
#include "pcb_sentinel/pipeline.hpp"

namespace pcb_sentinel {

FeatureExtractor make_extractor(const AppConfig& config);

/// Grid for a board size, restricted to config.regions when that is set.
RegionGrid configured_grid(const AppConfig& config, int board_w, int board_h);

/// models_dir/grid.json: board size, region side and the trained region ids.
void save_grid(const RegionGrid& grid, int out_side, const std::filesystem::path& models_dir);
RegionGrid load_grid(const std::filesystem::path& models_dir);

/// Loads models_dir/<region_id>/ for every grid region (MissingModelError).
BundleSet load_bundles(const std::filesystem::path& models_dir, const RegionGrid& grid);

/// Region crop of a board mask at the network input size.
BinaryMask region_truth(const BinaryMask& board_mask, const RegionSpec& spec, int out_side);

struct TrainedRegion {
  std::string region_id;
  std::filesystem::path dir;
  TrainManifest manifest;
};

/// Trains one bundle per configured region (or only `region`) and writes the
/// models tree with per-region NDJSON logs. Progress lines go to `progress`.
std::vector<TrainedRegion> train_all(const AppConfig& config, const FeatureExtractor& fx,
                                     const std::optional<std::string>& region = std::nullopt,
                                     std::ostream* progress = nullptr);

/// Sets each bundle's norm_range from the raw maps of the test split and saves it.
std::vector<std::string> calibrate_all(const AppConfig& config, const FeatureExtractor& fx,
                                       const std::optional<std::string>& region = std::nullopt);

/// Scores the test split, writes the report into evaluation.output_dir and
/// stores each region's best-IoU threshold in its bundle. Requires calibrated
/// bundles unless `calibrate_first`.
EvalReport evaluate_all(const AppConfig& config, const FeatureExtractor& fx, bool calibrate_first,
                        const std::optional<std::string>& region = std::nullopt);

/// Everything needed to analyse uploaded boards; read-only after construction.
class Runtime {
 public:
  explicit Runtime(AppConfig config);
  Runtime(AppConfig config, FeatureExtractor fx);

  struct Analysis {
    Raster board;  // registered (or as given)
    BoardMaps maps;
    nlohmann::json registration;  // null when disabled
  };
  /// Registers against the reference when enabled, then computes per-region maps.
  Analysis analyze(const Raster& image, std::string board_id) const;

  const AppConfig& config() const { return config_; }
  const FeatureExtractor& extractor() const { return fx_; }
  const RegionGrid& grid() const { return grid_; }
  const BundleSet& bundles() const { return bundles_; }

 private:
  void load();

  AppConfig config_;
  FeatureExtractor fx_;
  RegionGrid grid_;
  BundleSet bundles_;
  std::optional<Raster> reference_;
};

/// Writes report.json, overlay.png and maps/<region_id>.amap into out_dir.
nlohmann::json write_inference(const Runtime::Analysis& analysis, const BoardReport& report,
                               const std::filesystem::path& out_dir);

}  // namespace pcb_sentinel
