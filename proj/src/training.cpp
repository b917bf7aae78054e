#include "pcb_sentinel/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>

#include <opencv2/imgproc.hpp>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/hash.hpp"

namespace pcb_sentinel {

using nlohmann::json;

// --- corruption -------------------------------------------------------------------

void CorruptionConfig::validate() const {
  if (min_rects < 0 || max_rects < min_rects) throw ArgumentError("invalid rectangle count range");
  if (!(min_side_fraction > 0.0f) || max_side_fraction > 1.0f || max_side_fraction < min_side_fraction) {
    throw ArgumentError("rectangle side fractions must satisfy 0 < min <= max <= 1");
  }
  if (!(fill_value >= 0.0f && fill_value <= 1.0f)) throw ArgumentError("fill_value must lie in [0, 1]");
}

std::vector<Rect> draw_rects(int height, int width, const CorruptionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_int_distribution<int> count_dist(cfg.min_rects, cfg.max_rects);
  std::uniform_real_distribution<float> frac(cfg.min_side_fraction, cfg.max_side_fraction);
  const int count = count_dist(rng);
  std::vector<Rect> rects;
  rects.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rect r;
    r.width = std::clamp(static_cast<int>(std::lround(frac(rng) * width)), 1, width);
    r.height = std::clamp(static_cast<int>(std::lround(frac(rng) * height)), 1, height);
    r.x0 = std::uniform_int_distribution<int>(0, width - r.width)(rng);
    r.y0 = std::uniform_int_distribution<int>(0, height - r.height)(rng);
    rects.push_back(r);
  }
  return rects;
}

Raster corrupt(const Raster& img, const CorruptionConfig& cfg, std::mt19937_64& rng) {
  Raster out = img;
  const int ch = img.channels();
  for (const Rect& r : draw_rects(img.height(), img.width(), cfg, rng)) {
    for (int y = r.y0; y < r.y0 + r.height; ++y) {
      for (int x = r.x0; x < r.x0 + r.width; ++x) {
        for (int c = 0; c < ch; ++c) out.at(y, x, c) = cfg.fill_value;
      }
    }
  }
  return out;
}

Raster corrupt(const Raster& img, const CorruptionConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return corrupt(img, cfg, rng);
}

// --- augmentation -------------------------------------------------------------------

Raster augment_mvtec(const Raster& img, const MvtecAugment& cfg, std::mt19937_64& rng) {
  auto sym = [&rng](float r) { return r > 0.0f ? std::uniform_real_distribution<float>(-r, r)(rng) : 0.0f; };
  const double deg = std::numbers::pi / 180.0;
  const double rot = sym(cfg.rotation_deg) * deg;
  const double shear = std::tan(sym(cfg.shear_deg) * deg);
  const double scale = 1.0 + sym(cfg.scale);
  const float brightness = sym(cfg.brightness);
  const float contrast = 1.0f + sym(cfg.contrast);
  const float saturation = 1.0f + sym(cfg.saturation);

  const int h = img.height(), w = img.width(), ch = img.channels();
  cv::Mat src(h, w, CV_32FC(ch), const_cast<float*>(img.pixels().data()));
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  // A = R * Sh * S about the image centre.
  const double c = std::cos(rot), s = std::sin(rot);
  const double a00 = scale * c, a01 = scale * (c * shear - s);
  const double a10 = scale * s, a11 = scale * (s * shear + c);
  cv::Mat m = (cv::Mat_<double>(2, 3) << a00, a01, cx - a00 * cx - a01 * cy, a10, a11, cy - a10 * cx - a11 * cy);
  cv::Mat dst;
  cv::warpAffine(src, dst, m, src.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);

  const float* base = dst.ptr<float>();
  std::vector<float> px(base, base + static_cast<std::size_t>(h) * w * ch);
  double mean = 0.0;
  for (float v : px) mean += v;
  mean /= static_cast<double>(px.size());
  for (std::size_t i = 0; i < px.size(); i += ch) {
    float gray = 0.0f;
    if (ch == 3) gray = 0.299f * px[i] + 0.587f * px[i + 1] + 0.114f * px[i + 2];
    for (int k = 0; k < ch; ++k) {
      float v = px[i + k];
      if (ch == 3) v = gray + (v - gray) * saturation;
      v = static_cast<float>((v - mean) * contrast + mean) + brightness;
      px[i + k] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return Raster(h, w, img.color_space(), std::move(px));
}

// --- configuration -----------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 1) throw ArgumentError("batch_size and epochs must be positive");
  if (!(lr_floor > 0.0f) || !(lr_floor < lr_peak)) throw ArgumentError("need 0 < lr_floor < lr_peak");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ArgumentError("need 0 <= warmup_epochs < epochs");
  if (augmentation.max_offset_px < 0) throw ArgumentError("max_offset_px must be non-negative");
  corruption.validate();
  loss.validate();
}

void to_json(json& j, const TrainConfig& c) {
  const auto& m = c.augmentation.mvtec;
  j = json{{"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"lr_floor", c.lr_floor},
           {"lr_peak", c.lr_peak},
           {"warmup_epochs", c.warmup_epochs},
           {"seed", c.seed},
           {"corruption",
            {{"rect_count_range", {c.corruption.min_rects, c.corruption.max_rects}},
             {"rect_side_fraction_range", {c.corruption.min_side_fraction, c.corruption.max_side_fraction}},
             {"fill_value", c.corruption.fill_value}}},
           {"augmentation",
            {{"max_offset_px", c.augmentation.max_offset_px},
             {"mvtec",
              {{"rotation_deg", m.rotation_deg},
               {"shear_deg", m.shear_deg},
               {"saturation", m.saturation},
               {"contrast", m.contrast},
               {"brightness", m.brightness},
               {"scale", m.scale}}}}},
           {"loss", {{"lambda_mse", c.loss.lambda_mse}, {"lambda_feat", c.loss.lambda_feat}}},
           {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
           {"feature_cache_bytes", c.feature_cache_bytes}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.lr_floor = j.value("lr_floor", d.lr_floor);
  c.lr_peak = j.value("lr_peak", d.lr_peak);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.seed = j.value("seed", d.seed);
  c.feature_cache_bytes = j.value("feature_cache_bytes", d.feature_cache_bytes);
  if (j.contains("corruption")) {
    const auto& k = j.at("corruption");
    if (k.contains("rect_count_range")) {
      c.corruption.min_rects = k["rect_count_range"].at(0);
      c.corruption.max_rects = k["rect_count_range"].at(1);
    }
    if (k.contains("rect_side_fraction_range")) {
      c.corruption.min_side_fraction = k["rect_side_fraction_range"].at(0);
      c.corruption.max_side_fraction = k["rect_side_fraction_range"].at(1);
    }
    c.corruption.fill_value = k.value("fill_value", d.corruption.fill_value);
  }
  if (j.contains("augmentation")) {
    const auto& a = j.at("augmentation");
    c.augmentation.max_offset_px = a.value("max_offset_px", d.augmentation.max_offset_px);
    if (a.contains("mvtec")) {
      const auto& m = a.at("mvtec");
      auto& o = c.augmentation.mvtec;
      o.rotation_deg = m.value("rotation_deg", o.rotation_deg);
      o.shear_deg = m.value("shear_deg", o.shear_deg);
      o.saturation = m.value("saturation", o.saturation);
      o.contrast = m.value("contrast", o.contrast);
      o.brightness = m.value("brightness", o.brightness);
      o.scale = m.value("scale", o.scale);
    }
  }
  if (j.contains("loss")) {
    c.loss.lambda_mse = j["loss"].value("lambda_mse", d.loss.lambda_mse);
    c.loss.lambda_feat = j["loss"].value("lambda_feat", d.loss.lambda_feat);
  }
  if (j.contains("adam")) {
    c.adam.beta1 = j["adam"].value("beta1", d.adam.beta1);
    c.adam.beta2 = j["adam"].value("beta2", d.adam.beta2);
    c.adam.epsilon = j["adam"].value("epsilon", d.adam.epsilon);
  }
}

double lr_at(long step, long total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw ArgumentError("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (!(cfg.lr_floor < cfg.lr_peak) || cfg.warmup_epochs < 0 || cfg.warmup_epochs >= cfg.epochs) {
    throw ArgumentError("invalid schedule configuration");
  }
  const double lo = cfg.lr_floor, hi = cfg.lr_peak;
  const double warm = static_cast<double>(total_steps) * cfg.warmup_epochs / cfg.epochs;
  const double t = static_cast<double>(step);
  if (t < warm) return lo + (hi - lo) * t / warm;
  const double progress = (t - warm) / (static_cast<double>(total_steps) - warm);
  return lo + 0.5 * (hi - lo) * (1.0 + std::cos(std::numbers::pi * progress));
}

// --- samplers ------------------------------------------------------------------------

namespace {

std::string fingerprint_rasters(const std::vector<Raster>& images) {
  Fnv1a h;
  for (const auto& img : images) {
    h.update(std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" + std::to_string(img.channels()));
    h.update(img.pixels());
  }
  return h.hex();
}

}  // namespace

InMemorySampler::InMemorySampler(std::vector<Raster> images) : images_(std::move(images)) {}

std::string InMemorySampler::fingerprint() const { return fingerprint_rasters(images_); }

BoardRegionSampler::BoardRegionSampler(std::vector<std::filesystem::path> boards, RegionSpec spec, int out_side,
                                       int max_offset, bool preload)
    : paths_(std::move(boards)), spec_(std::move(spec)), out_side_(out_side), max_offset_(max_offset) {
  if (out_side_ < 1 || max_offset_ < 0) throw ArgumentError("invalid region sampler geometry");
  if (preload) {
    cache_.reserve(paths_.size());
    for (const auto& p : paths_) cache_.push_back(to_rgb(load_raster(p)));
  }
}

Raster BoardRegionSampler::sample(std::size_t i, std::mt19937_64& rng) const {
  int dx = 0, dy = 0;
  if (max_offset_ > 0) {
    std::uniform_int_distribution<int> off(-max_offset_, max_offset_);
    dx = off(rng);
    dy = off(rng);
  }
  if (!cache_.empty()) return extract_region(cache_.at(i), spec_, out_side_, dx, dy);
  return extract_region(to_rgb(load_raster(paths_.at(i))), spec_, out_side_, dx, dy);
}

std::string BoardRegionSampler::fingerprint() const {
  Fnv1a h;
  h.update(spec_.region_id + ":" + std::to_string(spec_.x0) + "," + std::to_string(spec_.y0) + "," +
           std::to_string(spec_.side) + "->" + std::to_string(out_side_));
  for (const auto& p : paths_) h.update(hash_file(p));
  return h.hex();
}

AugmentedImageSampler::AugmentedImageSampler(std::vector<Raster> images, int out_side, MvtecAugment aug, bool enabled)
    : aug_(aug), enabled_(enabled) {
  images_.reserve(images.size());
  for (auto& img : images) images_.push_back(resize_bilinear(to_rgb(img), out_side, out_side));
}

Raster AugmentedImageSampler::sample(std::size_t i, std::mt19937_64& rng) const {
  return enabled_ ? augment_mvtec(images_.at(i), aug_, rng) : images_.at(i);
}

std::string AugmentedImageSampler::fingerprint() const { return fingerprint_rasters(images_); }

json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"lr", r.lr}};
}

// --- trainer ---------------------------------------------------------------------------

namespace {

constexpr int kEvalBatch = 16;

void check_input(const CaeConfig& c, const nn::Shape& s) {
  if (s.c != c.input_channels || s.h != c.input_side || s.w != c.input_side) {
    throw ShapeError("training batch " + s.str() + " does not match the model input");
  }
}

/// The samples of `all` listed in `idx`, in that order.
nn::Tensor gather(const nn::Tensor& all, const std::vector<std::size_t>& idx) {
  nn::Shape s = all.shape();
  s.n = static_cast<int>(idx.size());
  nn::Tensor out(s);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = all.sample(static_cast<int>(idx[k]));
    std::copy(src.begin(), src.end(), out.sample(static_cast<int>(k)).begin());
  }
  return out;
}

}  // namespace

Trainer::Trainer(const CaeConfig& cae, const TrainConfig& cfg, const FeatureExtractor& fx)
    : model_(cae), cfg_(cfg), fx_(fx), adam_(model_.net().params(), cfg.adam) {
  cfg_.validate();
}

LossBreakdown Trainer::train_step(const nn::Tensor& input, const nn::Tensor& target, float lr,
                                  const std::vector<nn::Tensor>* target_features) {
  check_input(model_.config(), input.shape());
  auto& net = model_.net();
  net.zero_grad();
  nn::Tape tape;
  const auto out = net.forward_train(input, tape);
  nn::Tensor grad;
  const auto loss = combined_loss(fx_, cfg_.loss, out, target, &grad, target_features);
  if (!std::isfinite(loss.total) || !grad.all_finite()) {
    throw DivergenceError("loss became non-finite at step " + std::to_string(step_));
  }
  net.backward(grad, tape);
  adam_.step(lr);
  ++step_;
  return loss;
}

double Trainer::validation_loss(const RegionSampler& val) const {
  if (val.size() == 0) throw EmptyDatasetError("validation set is empty");
  std::mt19937_64 rng(cfg_.seed ^ 0x5eedULL);
  double sum = 0.0;
  for (std::size_t i = 0; i < val.size(); i += kEvalBatch) {
    std::vector<Raster> batch;
    for (std::size_t k = i; k < std::min(val.size(), i + kEvalBatch); ++k) batch.push_back(val.sample(k, rng));
    const auto x = nn::from_rasters(batch);
    const auto y = model_.reconstruct(x);
    sum += combined_loss(fx_, cfg_.loss, y, x).total * static_cast<double>(batch.size());
  }
  return sum / static_cast<double>(val.size());
}

ModelBundle train_region(const RegionSampler& train, const RegionSampler* val, const CaeConfig& cae,
                         const TrainConfig& cfg, const FeatureExtractor& fx, const TrainOptions& options) {
  cfg.validate();
  cae.validate();
  const std::size_t n = train.size();
  if (n == 0) throw EmptyDatasetError("no training samples for region '" + options.region_id + "'");
  if (val && val->size() == 0) val = nullptr;

  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
  const long steps_per_epoch = static_cast<long>(n / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;
  std::mt19937_64 rng(cfg.seed);

  Trainer trainer(cae, cfg, fx);

  // Clean targets never change for deterministic samplers, so their loss-tap
  // features can be computed once.
  std::vector<Raster> fixed;
  std::vector<nn::Tensor> cached;
  if (train.deterministic()) {
    fixed.reserve(n);
    for (std::size_t i = 0; i < n; ++i) fixed.push_back(train.sample(i, rng));
    if (cfg.loss.lambda_feat != 0.0f) {
      const auto probe = fx.extract_many(nn::from_raster(fixed.front()), fx.loss_layers());
      std::size_t bytes = 0;
      for (const auto& t : probe) bytes += t.size() * sizeof(float) * n;
      if (bytes <= cfg.feature_cache_bytes) {
        for (std::size_t i = 0; i < n; i += kEvalBatch) {
          const std::size_t end = std::min(n, i + kEvalBatch);
          const auto part = fx.extract_many(
              nn::from_rasters(std::span<const Raster>(fixed.data() + i, end - i)), fx.loss_layers());
          if (cached.empty()) {
            for (const auto& t : part) cached.emplace_back(nn::Shape{static_cast<int>(n), t.shape().c, t.shape().h, t.shape().w});
          }
          for (std::size_t k = 0; k < part.size(); ++k) {
            std::copy(part[k].data().begin(), part[k].data().end(),
                      cached[k].data().begin() + static_cast<std::ptrdiff_t>(i * part[k].shape().sample_size()));
          }
        }
      }
    }
  }

  std::optional<nn::Sequential> best_net;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  EpochRecord last;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    const double epoch_lr = lr_at(trainer.steps(), total_steps, cfg);
    for (long s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::size_t> idx(order.begin() + s * batch, order.begin() + (s + 1) * batch);
      std::vector<Raster> clean, noisy;
      clean.reserve(batch);
      noisy.reserve(batch);
      for (std::size_t i : idx) {
        clean.push_back(fixed.empty() ? train.sample(i, rng) : fixed[i]);
        noisy.push_back(options.corruptor ? options.corruptor(clean.back(), rng)
                                          : corrupt(clean.back(), cfg.corruption, rng));
      }
      std::vector<nn::Tensor> feats;
      if (!cached.empty()) {
        for (const auto& t : cached) feats.push_back(gather(t, idx));
      }
      const float lr = static_cast<float>(lr_at(trainer.steps(), total_steps, cfg));
      const auto loss = trainer.train_step(nn::from_rasters(noisy), nn::from_rasters(clean), lr,
                                           feats.empty() ? nullptr : &feats);
      epoch_loss += loss.total;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    rec.val_loss = val ? trainer.validation_loss(*val) : rec.train_loss;
    rec.lr = epoch_lr;
    if (!std::isfinite(rec.val_loss)) {
      throw DivergenceError("validation loss became non-finite after step " + std::to_string(trainer.steps()));
    }
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      best_epoch = rec.epoch;
      best_net = trainer.model().net();
    }
    if (options.log) *options.log << to_json(rec).dump() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(rec);
    last = rec;
  }

  ModelBundle bundle(cae);
  bundle.region_id = options.region_id;
  bundle.model.net() = std::move(*best_net);
  auto& m = bundle.train_manifest;
  m.dataset_hash = train.fingerprint() + (val ? "+" + val->fingerprint() : std::string());
  m.extractor_hash = fx.weights_hash();
  m.epochs = cfg.epochs;
  m.best_epoch = best_epoch;
  m.final_train_loss = last.train_loss;
  m.final_val_loss = last.val_loss;
  m.best_val_loss = best_loss;
  m.seed = cfg.seed;
  json settings;
  to_json(settings, cfg);
  settings["steps_per_epoch"] = steps_per_epoch;
  settings["effective_batch_size"] = batch;
  settings["extractor_pretrained"] = fx.pretrained();
  m.settings = settings;
  return bundle;
}

}  // namespace pcb_sentinel
