#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb_sentinel/imaging.hpp"
#include "pcb_sentinel/nn/sequential.hpp"

namespace pcb_sentinel {

/// Convolutional autoencoder hyperparameters.
///
/// Encoder: one stride-2 conv + BN + LeakyReLU per entry of encoder_filters
/// ("same" padding, so each halves the side), then FC(fc_width) + BN +
/// LeakyReLU and FC(latent_dim) + LeakyReLU. The decoder mirrors it:
/// FC(back to the last conv volume) + BN + LeakyReLU, transposed convs that
/// exactly double the side, and a final 3-filter transposed conv + sigmoid.
struct CaeConfig {
  int input_side = 256;
  int input_channels = 3;
  std::vector<int> encoder_filters{32, 64, 128, 128, 256, 256, 256};
  int kernel = 5;
  int stride = 2;
  int fc_width = 1024;
  int latent_dim = 500;
  float leaky_slope = 0.2f;
  float bn_momentum = 0.99f;
  float bn_epsilon = 1e-3f;
  std::uint64_t init_seed = 0;

  /// The full-size network for 256x256 regions.
  static CaeConfig full();
  /// 64x64 inputs, four encoder stages; sized for CI and desk runs.
  static CaeConfig toy();

  int padding() const { return (kernel - 1) / 2; }
  int output_padding() const { return stride - kernel + 2 * padding(); }
  int bottleneck_side() const;
  void validate() const;  // throws ArgumentError

  friend bool operator==(const CaeConfig&, const CaeConfig&) = default;
};

void to_json(nlohmann::json& j, const CaeConfig& c);
void from_json(const nlohmann::json& j, CaeConfig& c);

struct LayerShape {
  std::string layer;
  int height = 0;
  int width = 0;
  int channels = 0;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Output size of every conv / FC / transposed-conv layer, in forward order.
std::vector<LayerShape> intermediate_shapes(const CaeConfig& config);

using LatentVector = std::vector<float>;

/// The network itself. Inference is const and safe to share across threads;
/// training goes through net() on a private copy.
class CaeModel {
 public:
  explicit CaeModel(const CaeConfig& config);

  const CaeConfig& config() const { return config_; }
  nn::Sequential& net() { return net_; }
  const nn::Sequential& net() const { return net_; }
  std::size_t latent_end() const { return latent_end_; }
  std::size_t parameter_count() const { return net_.parameter_count(); }

  nn::Tensor encode(const nn::Tensor& x) const;
  nn::Tensor decode(const nn::Tensor& z) const;
  nn::Tensor reconstruct(const nn::Tensor& x) const;

 private:
  CaeConfig config_;
  nn::Sequential net_;
  std::size_t latent_end_ = 0;
};

struct TrainManifest {
  std::string dataset_hash;
  std::string extractor_hash;
  int epochs = 0;
  int best_epoch = -1;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json settings = nlohmann::json::object();  // optimizer, schedule, corruption
};

void to_json(nlohmann::json& j, const TrainManifest& m);
void from_json(const nlohmann::json& j, TrainManifest& m);

/// One region's deployable unit: network, calibration and provenance.
struct ModelBundle {
  explicit ModelBundle(const CaeConfig& config) : model(config) {}

  CaeModel model;
  std::string region_id;
  std::optional<ValueRange> norm_range;
  std::optional<float> threshold;  // operating threshold chosen on the evaluation set
  TrainManifest train_manifest;

  const CaeConfig& config() const { return model.config(); }
};

LatentVector encode(const ModelBundle& bundle, const Raster& x);
Raster decode(const ModelBundle& bundle, const LatentVector& z);
Raster reconstruct(const ModelBundle& bundle, const Raster& x);

/// Writes `<root>/<region_id>/manifest.json` and `weights.pcbw`.
std::filesystem::path save_bundle(const ModelBundle& bundle, const std::filesystem::path& root);
/// Loads a bundle directory (the directory itself, not its parent).
ModelBundle load_bundle(const std::filesystem::path& dir);

}  // namespace pcb_sentinel
