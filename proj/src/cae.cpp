#include "pcb_sentinel/cae.hpp"

#include <fstream>
#include <random>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/nn/layers.hpp"

namespace pcb_sentinel {

using nlohmann::json;

CaeConfig CaeConfig::full() { return CaeConfig{}; }

CaeConfig CaeConfig::toy() {
  CaeConfig c;
  c.input_side = 64;
  c.encoder_filters = {32, 64, 64, 64};
  c.fc_width = 512;
  c.latent_dim = 128;
  c.bn_momentum = 0.9f;
  return c;
}

int CaeConfig::bottleneck_side() const {
  int side = input_side;
  for (std::size_t i = 0; i < encoder_filters.size(); ++i) side = (side + stride - 1) / stride;
  return side;
}

void CaeConfig::validate() const {
  if (input_side <= 0 || input_channels <= 0 || kernel <= 0 || stride <= 0 || fc_width <= 0 || latent_dim <= 0) {
    throw ArgumentError("CAE sizes must be positive");
  }
  if (encoder_filters.empty()) throw ArgumentError("CAE needs at least one encoder layer");
  for (int f : encoder_filters) {
    if (f <= 0) throw ArgumentError("encoder filter counts must be positive");
  }
  if (kernel % 2 == 0) throw ArgumentError("kernel must be odd for symmetric same padding");
  long side = 1;
  for (std::size_t i = 0; i < encoder_filters.size(); ++i) side *= stride;
  if (input_side % side != 0) {
    throw ArgumentError("input_side " + std::to_string(input_side) + " must be divisible by stride^layers = " +
                        std::to_string(side));
  }
  if (output_padding() < 0 || output_padding() >= stride) {
    throw ArgumentError("kernel/stride combination cannot double exactly with a transposed conv");
  }
  if (!(leaky_slope >= 0.0f) || !(bn_momentum >= 0.0f && bn_momentum < 1.0f) || !(bn_epsilon > 0.0f)) {
    throw ArgumentError("invalid activation or batch-norm settings");
  }
}

void to_json(json& j, const CaeConfig& c) {
  j = json{{"input_side", c.input_side},   {"input_channels", c.input_channels},
           {"encoder_filters", c.encoder_filters}, {"kernel", c.kernel},
           {"stride", c.stride},           {"fc_width", c.fc_width},
           {"latent_dim", c.latent_dim},   {"leaky_slope", c.leaky_slope},
           {"bn_momentum", c.bn_momentum}, {"bn_epsilon", c.bn_epsilon},
           {"init_seed", c.init_seed}};
}

void from_json(const json& j, CaeConfig& c) {
  CaeConfig d;
  if (j.contains("profile")) {
    const auto p = j.at("profile").get<std::string>();
    if (p == "toy") {
      d = CaeConfig::toy();
    } else if (p != "full") {
      throw ArgumentError("unknown model profile '" + p + "'");
    }
  }
  c.input_side = j.value("input_side", d.input_side);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.encoder_filters = j.value("encoder_filters", d.encoder_filters);
  c.kernel = j.value("kernel", d.kernel);
  c.stride = j.value("stride", d.stride);
  c.fc_width = j.value("fc_width", d.fc_width);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  c.bn_epsilon = j.value("bn_epsilon", d.bn_epsilon);
  c.init_seed = j.value("init_seed", d.init_seed);
}

std::vector<LayerShape> intermediate_shapes(const CaeConfig& config) {
  config.validate();
  CaeModel model(config);
  std::vector<LayerShape> out;
  nn::Shape s{1, config.input_channels, config.input_side, config.input_side};
  const auto& net = model.net();
  for (std::size_t i = 0; i < net.size(); ++i) {
    s = net.layer(i).output_shape(s);
    const auto kind = net.layer(i).kind();
    if (kind == "conv2d" || kind == "linear" || kind == "conv_transpose2d") {
      out.push_back({net.name(i), s.h, s.w, s.c});
    }
  }
  return out;
}

// --- CaeModel ---------------------------------------------------------------------

CaeModel::CaeModel(const CaeConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const int k = config_.kernel, s = config_.stride, p = config_.padding(), op = config_.output_padding();
  const float slope = config_.leaky_slope, mom = config_.bn_momentum, eps = config_.bn_epsilon;

  int channels = config_.input_channels;
  int layer = 1;
  for (int f : config_.encoder_filters) {
    auto conv = std::make_unique<nn::Conv2d>(channels, f, k, s, p);
    nn::he_uniform(conv->weight().value, channels * k * k, rng);
    const auto idx = std::to_string(layer++);
    net_.add(std::move(conv), "enc_conv" + idx);
    net_.add(std::make_unique<nn::BatchNorm>(f, mom, eps), "enc_bn" + idx);
    net_.add(std::make_unique<nn::LeakyReLU>(slope), "enc_act" + idx);
    channels = f;
  }
  const int side = config_.bottleneck_side();
  const int flat = channels * side * side;

  auto fc = std::make_unique<nn::Linear>(flat, config_.fc_width);
  nn::glorot_uniform(fc->weight().value, flat, config_.fc_width, rng);
  net_.add(std::move(fc), "enc_fc");
  net_.add(std::make_unique<nn::BatchNorm>(config_.fc_width, mom, eps), "enc_fc_bn");
  net_.add(std::make_unique<nn::LeakyReLU>(slope), "enc_fc_act");

  auto latent = std::make_unique<nn::Linear>(config_.fc_width, config_.latent_dim);
  nn::glorot_uniform(latent->weight().value, config_.fc_width, config_.latent_dim, rng);
  net_.add(std::move(latent), "latent");
  net_.add(std::make_unique<nn::LeakyReLU>(slope), "latent_act");
  latent_end_ = net_.size();

  auto dfc = std::make_unique<nn::Linear>(config_.latent_dim, flat);
  nn::glorot_uniform(dfc->weight().value, config_.latent_dim, flat, rng);
  net_.add(std::move(dfc), "dec_fc");
  net_.add(std::make_unique<nn::BatchNorm>(flat, mom, eps), "dec_fc_bn");
  net_.add(std::make_unique<nn::LeakyReLU>(slope), "dec_fc_act");
  net_.add(std::make_unique<nn::Reshape>(channels, side, side), "dec_reshape");

  // Mirror: filters of encoder layers n-2 ... 0, then the output colour planes.
  std::vector<int> dec_filters(config_.encoder_filters.rbegin() + 1, config_.encoder_filters.rend());
  dec_filters.push_back(config_.input_channels);
  layer = 1;
  for (std::size_t i = 0; i < dec_filters.size(); ++i) {
    const int f = dec_filters[i];
    auto tconv = std::make_unique<nn::ConvTranspose2d>(channels, f, k, s, p, op);
    nn::he_uniform(tconv->weight().value, f * k * k, rng);
    const auto idx = std::to_string(layer++);
    net_.add(std::move(tconv), "dec_tconv" + idx);
    if (i + 1 < dec_filters.size()) {
      net_.add(std::make_unique<nn::BatchNorm>(f, mom, eps), "dec_bn" + idx);
      net_.add(std::make_unique<nn::LeakyReLU>(slope), "dec_act" + idx);
    } else {
      net_.add(std::make_unique<nn::Sigmoid>(), "dec_sigmoid");
    }
    channels = f;
  }
}

nn::Tensor CaeModel::encode(const nn::Tensor& x) const {
  const auto& s = x.shape();
  if (s.c != config_.input_channels || s.h != config_.input_side || s.w != config_.input_side) {
    throw ShapeError("CAE expects " + std::to_string(config_.input_channels) + "x" + std::to_string(config_.input_side) +
                     "x" + std::to_string(config_.input_side) + " input, got " + s.str());
  }
  return net_.forward(x, 0, latent_end_);
}

nn::Tensor CaeModel::decode(const nn::Tensor& z) const {
  if (static_cast<int>(z.shape().sample_size()) != config_.latent_dim) {
    throw ShapeError("latent must have " + std::to_string(config_.latent_dim) + " values, got " + z.shape().str());
  }
  return net_.forward(z.reshaped({z.shape().n, config_.latent_dim, 1, 1}), latent_end_);
}

nn::Tensor CaeModel::reconstruct(const nn::Tensor& x) const { return decode(encode(x)); }

// --- bundle-level helpers ---------------------------------------------------------------

LatentVector encode(const ModelBundle& bundle, const Raster& x) {
  const auto z = bundle.model.encode(nn::from_raster(x));
  return {z.data().begin(), z.data().end()};
}

Raster decode(const ModelBundle& bundle, const LatentVector& z) {
  nn::Tensor t({1, static_cast<int>(z.size()), 1, 1}, z);
  return nn::to_raster(bundle.model.decode(t));
}

Raster reconstruct(const ModelBundle& bundle, const Raster& x) {
  return nn::to_raster(bundle.model.reconstruct(nn::from_raster(x)));
}

void to_json(json& j, const TrainManifest& m) {
  j = json{{"dataset_hash", m.dataset_hash},
           {"extractor_hash", m.extractor_hash},
           {"epochs", m.epochs},
           {"best_epoch", m.best_epoch},
           {"final_train_loss", m.final_train_loss},
           {"final_val_loss", m.final_val_loss},
           {"best_val_loss", m.best_val_loss},
           {"seed", m.seed},
           {"settings", m.settings}};
}

void from_json(const json& j, TrainManifest& m) {
  m.dataset_hash = j.value("dataset_hash", "");
  m.extractor_hash = j.value("extractor_hash", "");
  m.epochs = j.value("epochs", 0);
  m.best_epoch = j.value("best_epoch", -1);
  m.final_train_loss = j.value("final_train_loss", 0.0);
  m.final_val_loss = j.value("final_val_loss", 0.0);
  m.best_val_loss = j.value("best_val_loss", 0.0);
  m.seed = j.value("seed", std::uint64_t{0});
  m.settings = j.value("settings", json::object());
}

std::filesystem::path save_bundle(const ModelBundle& bundle, const std::filesystem::path& root) {
  if (bundle.region_id.empty()) throw ArgumentError("bundle has no region_id");
  const auto dir = root / bundle.region_id;
  std::filesystem::create_directories(dir);
  nn::save_state(dir / "weights.pcbw", bundle.model.net());
  json manifest{{"format", "pcb-sentinel-bundle/1"},
                {"region_id", bundle.region_id},
                {"config", bundle.config()},
                {"weights", "weights.pcbw"},
                {"train_manifest", bundle.train_manifest}};
  manifest["norm_range"] =
      bundle.norm_range ? json::array({bundle.norm_range->min, bundle.norm_range->max}) : json(nullptr);
  manifest["threshold"] = bundle.threshold ? json(*bundle.threshold) : json(nullptr);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IOError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  return dir;
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IOError("no bundle manifest at " + path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  ModelBundle bundle(manifest.at("config").get<CaeConfig>());
  bundle.region_id = manifest.value("region_id", dir.filename().string());
  nn::load_state(dir / manifest.value("weights", std::string("weights.pcbw")), bundle.model.net());
  if (manifest.contains("norm_range") && !manifest["norm_range"].is_null()) {
    const auto r = manifest["norm_range"];
    bundle.norm_range = ValueRange{r.at(0).get<float>(), r.at(1).get<float>()};
  }
  if (manifest.contains("threshold") && !manifest["threshold"].is_null()) {
    bundle.threshold = manifest["threshold"].get<float>();
  }
  if (manifest.contains("train_manifest")) bundle.train_manifest = manifest["train_manifest"].get<TrainManifest>();
  return bundle;
}

}  // namespace pcb_sentinel
