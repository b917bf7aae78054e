#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "pcb_sentinel/imaging.hpp"
#include "pcb_sentinel/nn/sequential.hpp"

namespace pcb_sentinel {

struct LossWeights {
  float lambda_mse = 0.01f;
  float lambda_feat = 1.0f;
  void validate() const;  // throws ArgumentError
};

/// Frozen feature backbone with numbered tap points.
///
/// Layer j (1-based) is the activated output of the j-th convolution. Inputs
/// are [0,1] tensors; the per-channel mean/std normalization happens inside.
class FeatureExtractor {
 public:
  /// `tap_ends[j-1]` is the Sequential index one past the layer producing tap j.
  FeatureExtractor(nn::Sequential net, std::vector<std::size_t> tap_ends, std::vector<float> mean,
                   std::vector<float> stddev, std::vector<int> loss_layers, int anomaly_layer, std::string weights_hash,
                   bool pretrained);

  /// VGG19 convolution stack (16 taps). Loads a PCBW archive when `weights`
  /// names an existing file, otherwise falls back to a fixed-seed random init.
  static FeatureExtractor vgg19(const std::filesystem::path& weights = {}, std::vector<int> loss_layers = {5, 8, 13, 15},
                                int anomaly_layer = 12);
  /// vgg19() with the archive looked up in $PCB_SENTINEL_CACHE (or `cache_dir`).
  static FeatureExtractor from_cache(const std::filesystem::path& cache_dir = {},
                                     std::vector<int> loss_layers = {5, 8, 13, 15}, int anomaly_layer = 12);
  static constexpr const char* kWeightsFile = "vgg19_features.pcbw";

  int depth() const { return static_cast<int>(tap_ends_.size()); }
  const std::vector<int>& loss_layers() const { return loss_layers_; }
  int anomaly_layer() const { return anomaly_layer_; }
  const std::string& weights_hash() const { return weights_hash_; }
  bool pretrained() const { return pretrained_; }
  const nn::Sequential& net() const { return net_; }
  int input_channels() const { return static_cast<int>(mean_.size()); }

  /// Activations of one tap for a batch, N x C_j x H_j x W_j.
  nn::Tensor extract(const nn::Tensor& x, int layer) const;
  nn::Tensor extract(const Raster& img, int layer) const;
  /// Several taps from a single forward pass, in the order requested.
  std::vector<nn::Tensor> extract_many(const nn::Tensor& x, const std::vector<int>& layers) const;

  /// Forward pass that records what input-gradient backprop needs.
  struct Trace {
    std::vector<int> layers;             // sorted, unique
    std::vector<nn::Tensor> features;    // one per entry of `layers`
    std::vector<nn::Tape> segments;      // segment k ends at layers[k]
  };
  Trace trace(const nn::Tensor& x, const std::vector<int>& layers) const;
  /// Gradient w.r.t. the [0,1] input given one upstream gradient per traced tap
  /// (empty tensors count as zero).
  nn::Tensor backward(const Trace& trace, const std::vector<nn::Tensor>& feature_grads) const;

 private:
  void check_layer(int layer) const;
  nn::Tensor preprocess(const nn::Tensor& x) const;

  nn::Sequential net_;
  std::vector<std::size_t> tap_ends_;
  std::vector<float> mean_, stddev_;
  std::vector<int> loss_layers_;
  int anomaly_layer_;
  std::string weights_hash_;
  bool pretrained_;
};

/// Builds the VGG19 convolution stack with layers named "conv{block}_{i}".
nn::Sequential build_vgg19_features(std::vector<std::size_t>& tap_ends);

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;
  double content = 0.0;
};

/// Sum over loss taps of ||phi_j(y_hat) - phi_j(y)||^2 / (C_j H_j W_j).
double content_loss(const FeatureExtractor& fx, const Raster& y_hat, const Raster& y);
double combined_loss(const FeatureExtractor& fx, const LossWeights& w, const Raster& y_hat, const Raster& y);

/// Batched combined loss, averaged over samples. When `grad` is non-null it
/// receives d(loss)/d(y_hat). `target_features`, if given, are the loss-tap
/// activations of `y` (in loss_layers() order) and skip recomputing them.
LossBreakdown combined_loss(const FeatureExtractor& fx, const LossWeights& w, const nn::Tensor& y_hat,
                            const nn::Tensor& y, nn::Tensor* grad = nullptr,
                            const std::vector<nn::Tensor>* target_features = nullptr);

/// Sum over channels of |phi(y_hat) - phi(y)| at the anomaly tap.
FloatMap anomaly_map(const FeatureExtractor& fx, const Raster& y_hat, const Raster& y);
std::vector<FloatMap> anomaly_maps(const FeatureExtractor& fx, const nn::Tensor& y_hat, const nn::Tensor& y);

}  // namespace pcb_sentinel
