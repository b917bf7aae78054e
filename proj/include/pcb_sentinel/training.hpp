#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb_sentinel/cae.hpp"
#include "pcb_sentinel/nn/adam.hpp"
#include "pcb_sentinel/partitioning.hpp"
#include "pcb_sentinel/perceptual.hpp"

namespace pcb_sentinel {

/// Cutout-style input corruption. Each call draws, in order: the rectangle
/// count (uniform integer in [min_rects, max_rects]), then per rectangle the
/// width fraction, height fraction (uniform reals in the fraction range,
/// times the image side, rounded, at least 1 px), x0 and y0 (uniform integers
/// keeping the rectangle inside the image).
struct CorruptionConfig {
  int min_rects = 1;
  int max_rects = 3;
  float min_side_fraction = 0.1f;
  float max_side_fraction = 0.4f;
  float fill_value = 0.0f;
  void validate() const;
};

struct Rect {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

std::vector<Rect> draw_rects(int height, int width, const CorruptionConfig& cfg, std::mt19937_64& rng);
Raster corrupt(const Raster& img, const CorruptionConfig& cfg, std::mt19937_64& rng);
Raster corrupt(const Raster& img, const CorruptionConfig& cfg, std::uint64_t seed);

/// Ranges are symmetric: a value r means uniform in [-r, r] (scale: 1 +/- r).
struct MvtecAugment {
  float rotation_deg = 10.0f;
  float shear_deg = 5.0f;
  float saturation = 0.1f;
  float contrast = 0.1f;
  float brightness = 0.1f;
  float scale = 0.05f;
};

struct AugmentConfig {
  int max_offset_px = 80;  // board-crop jitter for region samplers
  MvtecAugment mvtec;
};

Raster augment_mvtec(const Raster& img, const MvtecAugment& cfg, std::mt19937_64& rng);

struct TrainConfig {
  int batch_size = 128;
  int epochs = 1000;
  double lr_floor = 1e-5;
  double lr_peak = 0.0072;
  int warmup_epochs = 3;
  std::uint64_t seed = 0;
  CorruptionConfig corruption;
  AugmentConfig augmentation;
  LossWeights loss;
  nn::AdamConfig adam;
  /// Upper bound for caching the clean targets' loss-tap features in memory.
  std::size_t feature_cache_bytes = std::size_t{1} << 30;

  void validate() const;  // throws ArgumentError
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear warmup from lr_floor to lr_peak over the first warmup_epochs worth
/// of steps, then cosine decay back to lr_floor at total_steps.
double lr_at(long step, long total_steps, const TrainConfig& cfg);

/// Source of normal training samples for one region.
class RegionSampler {
 public:
  virtual ~RegionSampler() = default;
  virtual std::size_t size() const = 0;
  /// Sample i; augmenting samplers consume randomness from `rng`.
  virtual Raster sample(std::size_t i, std::mt19937_64& rng) const = 0;
  /// True when sample(i) never depends on rng.
  virtual bool deterministic() const = 0;
  /// Content fingerprint used in the training manifest.
  virtual std::string fingerprint() const = 0;
};

class InMemorySampler final : public RegionSampler {
 public:
  explicit InMemorySampler(std::vector<Raster> images);
  std::size_t size() const override { return images_.size(); }
  Raster sample(std::size_t i, std::mt19937_64&) const override { return images_.at(i); }
  bool deterministic() const override { return true; }
  std::string fingerprint() const override;

 private:
  std::vector<Raster> images_;
};

/// Crops one region out of whole boards, jittering the crop by up to
/// max_offset pixels per axis (clamped to the board).
class BoardRegionSampler final : public RegionSampler {
 public:
  /// With `preload` the boards are decoded once and kept in memory.
  BoardRegionSampler(std::vector<std::filesystem::path> boards, RegionSpec spec, int out_side, int max_offset,
                     bool preload);
  std::size_t size() const override { return paths_.size(); }
  Raster sample(std::size_t i, std::mt19937_64& rng) const override;
  bool deterministic() const override { return max_offset_ == 0; }
  std::string fingerprint() const override;

 private:
  std::vector<std::filesystem::path> paths_;
  std::vector<Raster> cache_;
  RegionSpec spec_;
  int out_side_;
  int max_offset_;
};

/// Whole images resized to a square side with MVTec-style geometric and
/// photometric augmentation.
class AugmentedImageSampler final : public RegionSampler {
 public:
  AugmentedImageSampler(std::vector<Raster> images, int out_side, MvtecAugment aug, bool enabled);
  std::size_t size() const override { return images_.size(); }
  Raster sample(std::size_t i, std::mt19937_64& rng) const override;
  bool deterministic() const override { return !enabled_; }
  std::string fingerprint() const override;

 private:
  std::vector<Raster> images_;
  MvtecAugment aug_;
  bool enabled_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

/// One model's optimization state. Exposed so a single step can be inspected.
class Trainer {
 public:
  Trainer(const CaeConfig& cae, const TrainConfig& cfg, const FeatureExtractor& fx);

  /// One Adam step on (input -> target); returns the batch loss before the update.
  LossBreakdown train_step(const nn::Tensor& input, const nn::Tensor& target, float lr,
                           const std::vector<nn::Tensor>* target_features = nullptr);
  /// Mean loss of clean reconstructions in inference mode.
  double validation_loss(const RegionSampler& val) const;

  CaeModel& model() { return model_; }
  const CaeModel& model() const { return model_; }
  long steps() const { return step_; }

 private:
  CaeModel model_;
  TrainConfig cfg_;
  const FeatureExtractor& fx_;
  nn::Adam adam_;
  long step_ = 0;
};

struct TrainOptions {
  std::string region_id;
  /// Optional NDJSON sink receiving one EpochRecord per line.
  std::ostream* log = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Replaces corrupt() when set; receives the clean sample.
  std::function<Raster(const Raster&, std::mt19937_64&)> corruptor;
};

/// Trains one region's CAE and returns the best-validation checkpoint.
/// Without a validation sampler the training loss selects the checkpoint.
ModelBundle train_region(const RegionSampler& train, const RegionSampler* val, const CaeConfig& cae,
                         const TrainConfig& cfg, const FeatureExtractor& fx, const TrainOptions& options = {});

}  // namespace pcb_sentinel
