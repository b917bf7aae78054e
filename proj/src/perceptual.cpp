#include "pcb_sentinel/perceptual.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/hash.hpp"

namespace pcb_sentinel {

void LossWeights::validate() const {
  if (!(lambda_mse >= 0.0f) || !(lambda_feat >= 0.0f)) throw ArgumentError("loss weights must be non-negative");
  if (lambda_mse == 0.0f && lambda_feat == 0.0f) throw ArgumentError("loss weights cannot both be zero");
}

namespace {

constexpr std::uint64_t kRandomInitSeed = 19;

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

void require_same(const nn::Shape& a, const nn::Shape& b) {
  if (a != b) throw ShapeMismatchError("shapes differ: " + a.str() + " vs " + b.str());
}

}  // namespace

FeatureExtractor::FeatureExtractor(nn::Sequential net, std::vector<std::size_t> tap_ends, std::vector<float> mean,
                                   std::vector<float> stddev, std::vector<int> loss_layers, int anomaly_layer,
                                   std::string weights_hash, bool pretrained)
    : net_(std::move(net)),
      tap_ends_(std::move(tap_ends)),
      mean_(std::move(mean)),
      stddev_(std::move(stddev)),
      loss_layers_(sorted_unique(std::move(loss_layers))),
      anomaly_layer_(anomaly_layer),
      weights_hash_(std::move(weights_hash)),
      pretrained_(pretrained) {
  if (mean_.empty() || mean_.size() != stddev_.size()) throw ArgumentError("mean/std must have one entry per channel");
  for (float s : stddev_) {
    if (!(s > 0.0f)) throw ArgumentError("normalization std must be positive");
  }
  for (std::size_t i = 0; i < tap_ends_.size(); ++i) {
    if (tap_ends_[i] > net_.size() || (i > 0 && tap_ends_[i] <= tap_ends_[i - 1])) {
      throw ArgumentError("tap indices must be increasing and within the network");
    }
  }
  for (int l : loss_layers_) check_layer(l);
  check_layer(anomaly_layer_);
}

nn::Sequential build_vgg19_features(std::vector<std::size_t>& tap_ends) {
  // Channels per block and convolutions per block.
  constexpr std::array<int, 5> widths{64, 128, 256, 512, 512};
  constexpr std::array<int, 5> counts{2, 2, 4, 4, 4};
  nn::Sequential net;
  tap_ends.clear();
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < counts[b]; ++i) {
      const auto tag = std::to_string(b + 1) + "_" + std::to_string(i + 1);
      net.add(std::make_unique<nn::Conv2d>(in, widths[b], 3, 1, 1), "conv" + tag);
      net.add(std::make_unique<nn::ReLU>(), "relu" + tag);
      tap_ends.push_back(net.size());
      in = widths[b];
    }
    if (b < 4) net.add(std::make_unique<nn::MaxPool2x2>(), "pool" + std::to_string(b + 1));
  }
  return net;
}

FeatureExtractor FeatureExtractor::vgg19(const std::filesystem::path& weights, std::vector<int> loss_layers,
                                         int anomaly_layer) {
  std::vector<std::size_t> taps;
  auto net = build_vgg19_features(taps);
  std::string hash;
  bool pretrained = false;
  if (!weights.empty() && std::filesystem::is_regular_file(weights)) {
    nn::load_state(weights, net);
    hash = hash_file(weights);
    pretrained = true;
  } else {
    std::mt19937_64 rng(kRandomInitSeed);
    for (std::size_t i = 0; i < net.size(); ++i) {
      if (auto* conv = dynamic_cast<nn::Conv2d*>(&net.layer(i))) {
        nn::he_uniform(conv->weight().value, conv->in_channels() * conv->kernel() * conv->kernel(), rng);
      }
    }
    Fnv1a h;
    h.update("vgg19-random-init:seed=" + std::to_string(kRandomInitSeed));
    hash = h.hex();
  }
  return FeatureExtractor(std::move(net), std::move(taps), {0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f},
                          std::move(loss_layers), anomaly_layer, std::move(hash), pretrained);
}

FeatureExtractor FeatureExtractor::from_cache(const std::filesystem::path& cache_dir, std::vector<int> loss_layers,
                                              int anomaly_layer) {
  std::filesystem::path dir = cache_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("PCB_SENTINEL_CACHE")) dir = env;
  }
  const auto file = dir.empty() ? std::filesystem::path{} : dir / kWeightsFile;
  return vgg19(file, std::move(loss_layers), anomaly_layer);
}

void FeatureExtractor::check_layer(int layer) const {
  if (layer < 1 || layer > depth()) {
    throw LayerIndexError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(depth()));
  }
}

nn::Tensor FeatureExtractor::preprocess(const nn::Tensor& x) const {
  const auto& s = x.shape();
  if (s.c != input_channels()) {
    throw ShapeError("extractor expects " + std::to_string(input_channels()) + " channels, got " + s.str());
  }
  nn::Tensor out(s);
  const std::size_t plane = s.plane();
  auto src = x.data();
  auto dst = out.data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      const float m = mean_[c], inv = 1.0f / stddev_[c];
      for (std::size_t i = 0; i < plane; ++i) dst[off + i] = (src[off + i] - m) * inv;
    }
  }
  return out;
}

std::vector<nn::Tensor> FeatureExtractor::extract_many(const nn::Tensor& x, const std::vector<int>& layers) const {
  for (int l : layers) check_layer(l);
  const auto order = sorted_unique(layers);
  std::vector<nn::Tensor> found(order.size());
  nn::Tensor h = preprocess(x);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t end = tap_ends_[order[k] - 1];
    h = net_.forward(h, pos, end);
    pos = end;
    found[k] = h;
  }
  std::vector<nn::Tensor> out;
  out.reserve(layers.size());
  for (int l : layers) out.push_back(found[std::lower_bound(order.begin(), order.end(), l) - order.begin()]);
  return out;
}

nn::Tensor FeatureExtractor::extract(const nn::Tensor& x, int layer) const { return extract_many(x, {layer}).front(); }

nn::Tensor FeatureExtractor::extract(const Raster& img, int layer) const {
  return extract(nn::from_raster(img), layer);
}

FeatureExtractor::Trace FeatureExtractor::trace(const nn::Tensor& x, const std::vector<int>& layers) const {
  for (int l : layers) check_layer(l);
  Trace t;
  t.layers = sorted_unique(layers);
  t.segments.resize(t.layers.size());
  nn::Tensor h = preprocess(x);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < t.layers.size(); ++k) {
    const std::size_t end = tap_ends_[t.layers[k] - 1];
    h = net_.forward_frozen(h, t.segments[k], pos, end);
    pos = end;
    t.features.push_back(h);
  }
  return t;
}

nn::Tensor FeatureExtractor::backward(const Trace& trace, const std::vector<nn::Tensor>& feature_grads) const {
  if (feature_grads.size() != trace.layers.size()) throw ArgumentError("one gradient per traced layer expected");
  nn::Tensor g;
  for (std::size_t k = trace.layers.size(); k-- > 0;) {
    if (!feature_grads[k].empty()) {
      require_same(feature_grads[k].shape(), trace.features[k].shape());
      if (g.empty()) {
        g = feature_grads[k];
      } else {
        g += feature_grads[k];
      }
    }
    if (!g.empty()) g = net_.backward_input(g, trace.segments[k]);
  }
  if (g.empty()) return g;
  // Undo the input normalization.
  const auto& s = g.shape();
  const std::size_t plane = s.plane();
  auto d = g.data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float inv = 1.0f / stddev_[c];
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) d[off + i] *= inv;
    }
  }
  return g;
}

// --- losses -------------------------------------------------------------------------

LossBreakdown combined_loss(const FeatureExtractor& fx, const LossWeights& w, const nn::Tensor& y_hat,
                            const nn::Tensor& y, nn::Tensor* grad, const std::vector<nn::Tensor>* target_features) {
  w.validate();
  require_same(y_hat.shape(), y.shape());
  LossBreakdown out;
  if (grad) *grad = nn::Tensor(y_hat.shape());

  const auto a = y_hat.data();
  const auto b = y.data();
  const double inv_size = 1.0 / static_cast<double>(a.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sq += d * d;
  }
  out.mse = sq * inv_size;
  if (grad && w.lambda_mse != 0.0f) {
    auto g = grad->data();
    const double k = 2.0 * w.lambda_mse * inv_size;
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = static_cast<float>(k * (static_cast<double>(a[i]) - b[i]));
  }

  if (w.lambda_feat != 0.0f) {
    const auto& layers = fx.loss_layers();
    std::vector<nn::Tensor> computed;
    if (!target_features) {
      computed = fx.extract_many(y, layers);
      target_features = &computed;
    }
    if (target_features->size() != layers.size()) throw ArgumentError("target features do not match the loss layers");
    FeatureExtractor::Trace tr;
    std::vector<nn::Tensor> feats;
    if (grad) {
      tr = fx.trace(y_hat, layers);
      feats = tr.features;
    } else {
      feats = fx.extract_many(y_hat, layers);
    }
    std::vector<nn::Tensor> fgrads(layers.size());
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& fy = (*target_features)[k];
      require_same(feats[k].shape(), fy.shape());
      // Averaging over the batch and normalizing by C*H*W together divide by the tensor size.
      const double norm = 1.0 / static_cast<double>(fy.size());
      const auto p = feats[k].data();
      const auto q = fy.data();
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - q[i];
        s += d * d;
      }
      out.content += s * norm;
      if (grad) {
        fgrads[k] = nn::Tensor(fy.shape());
        auto g = fgrads[k].data();
        const double c = 2.0 * w.lambda_feat * norm;
        for (std::size_t i = 0; i < p.size(); ++i) g[i] = static_cast<float>(c * (static_cast<double>(p[i]) - q[i]));
      }
    }
    if (grad) {
      const auto gin = fx.backward(tr, fgrads);
      if (!gin.empty()) *grad += gin;
    }
  }
  out.total = w.lambda_mse * out.mse + w.lambda_feat * out.content;
  return out;
}

namespace {

void require_same(const Raster& a, const Raster& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels()) {
    throw ShapeMismatchError("raster dimensions differ");
  }
}

}  // namespace

double content_loss(const FeatureExtractor& fx, const Raster& y_hat, const Raster& y) {
  require_same(y_hat, y);
  return combined_loss(fx, LossWeights{0.0f, 1.0f}, nn::from_raster(y_hat), nn::from_raster(y)).content;
}

double combined_loss(const FeatureExtractor& fx, const LossWeights& w, const Raster& y_hat, const Raster& y) {
  require_same(y_hat, y);
  return combined_loss(fx, w, nn::from_raster(y_hat), nn::from_raster(y)).total;
}

std::vector<FloatMap> anomaly_maps(const FeatureExtractor& fx, const nn::Tensor& y_hat, const nn::Tensor& y) {
  require_same(y_hat.shape(), y.shape());
  const auto fa = fx.extract(y_hat, fx.anomaly_layer());
  const auto fb = fx.extract(y, fx.anomaly_layer());
  const auto& s = fa.shape();
  std::vector<FloatMap> maps;
  maps.reserve(s.n);
  for (int n = 0; n < s.n; ++n) {
    std::vector<float> acc(s.plane(), 0.0f);
    const auto pa = fa.sample(n);
    const auto pb = fb.sample(n);
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = static_cast<std::size_t>(c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) acc[i] += std::abs(pa[off + i] - pb[off + i]);
    }
    maps.emplace_back(s.h, s.w, std::move(acc));
  }
  return maps;
}

FloatMap anomaly_map(const FeatureExtractor& fx, const Raster& y_hat, const Raster& y) {
  require_same(y_hat, y);
  return anomaly_maps(fx, nn::from_raster(y_hat), nn::from_raster(y)).front();
}

}  // namespace pcb_sentinel
