// Acceptance run: one [PASS]/[FAIL] line per gating criterion.
// Exits 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "../fixture.hpp"
#include "../support.hpp"
#include "pcb_sentinel/cae.hpp"
#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/evaluation.hpp"
#include "pcb_sentinel/partitioning.hpp"
#include "pcb_sentinel/perceptual.hpp"
#include "pcb_sentinel/pipeline.hpp"
#include "pcb_sentinel/registration.hpp"
#include "pcb_sentinel/training.hpp"
#include "pcb_sentinel/workflow.hpp"

using namespace pcb_sentinel;
using namespace testing_support;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void verdict(const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

// Runs one criterion; an escaping exception counts as a failure.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [pass, detail] = body();
    verdict(name, pass, detail);
  } catch (const std::exception& e) {
    verdict(name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- oracles -------------------------------------------------------------------------

ConfusionCounts random_counts(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint64_t> d(0, 5000);
  std::bernoulli_distribution zero(0.1);
  return {zero(rng) ? 0 : d(rng), zero(rng) ? 0 : d(rng), zero(rng) ? 0 : d(rng), zero(rng) ? 0 : d(rng)};
}

double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

double oracle_content(const FeatureExtractor& fx, const nn::Tensor& a, const nn::Tensor& b, int n) {
  const auto fa = naive_stub_forward(fx, a, n), fb = naive_stub_forward(fx, b, n);
  double total = 0;
  for (int layer : fx.loss_layers()) {
    const auto& x = fa.taps[layer - 1];
    const auto& y = fb.taps[layer - 1];
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    total += s / x.size();
  }
  return total;
}

double oracle_mse(const nn::Tensor& a, const nn::Tensor& b, int n) {
  const auto sa = a.sample(n), sb = b.sample(n);
  double s = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += std::pow(static_cast<double>(sa[i]) - sb[i], 2);
  return s / sa.size();
}

Eigen::Matrix3d by_h22(const Eigen::Matrix3d& m) { return m / m(2, 2); }

// --- criteria ------------------------------------------------------------------------

std::pair<bool, std::string> metric_suite(double& dice_jaccard_worst, int& dice_jaccard_cases) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  dice_jaccard_worst = 0;
  dice_jaccard_cases = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = random_counts(rng);
    const double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
    if (c.tp + c.fp > 0 && precision(c) != tp / (tp + fp)) ++mismatches;
    if (c.tp + c.fn > 0 && recall(c) != tp / (tp + fn)) ++mismatches;
    if (c.fp + c.tn > 0 && fpr(c) != fp / (fp + tn)) ++mismatches;
    if (c.tp + c.fp + c.fn > 0 && iou(c) != tp / (tp + fp + fn)) ++mismatches;
    if (c.tp > 0) {
      const double p = tp / (tp + fp), r = tp / (tp + fn);
      if (f_score(c) != 2 * p * r / (p + r)) ++mismatches;
      const double f = f_score(c);
      dice_jaccard_worst = std::max(dice_jaccard_worst, std::abs(iou(c) - f / (2.0 - f)));
      ++dice_jaccard_cases;
    }
  }
  double auc_worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 300);
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    const int levels = trial % 3 == 0 ? 5 : 0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      s[i] = levels ? std::round(u(rng) * levels) : u(rng);
      y[i] = rng() % 2;
    }
    y[0] = 1;
    y[1] = 0;
    auc_worst = std::max(auc_worst, std::abs(roc_auc(s, y).auc - pairwise_auc(s, y)));
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && auc_worst <= 1e-12 && secs < 10.0,
          fmt("%d metric mismatches over 1000 count sets, worst |auc - pairwise| %.2e over 200 sets, %.2f s",
              mismatches, auc_worst, secs)};
}

std::pair<bool, std::string> loss_correctness() {
  const auto t0 = Clock::now();
  const auto fx = stub_extractor();
  const LossWeights w;
  double worst_value = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor({2, 3, 8, 8}, 100 + seed), b = random_tensor({2, 3, 8, 8}, 200 + seed);
    const auto lb = combined_loss(fx, w, a, b);
    double mse = 0, content = 0;
    for (int n = 0; n < 2; ++n) {
      mse += oracle_mse(a, b, n) / 2;
      content += oracle_content(fx, a, b, n) / 2;
    }
    worst_value = std::max({worst_value, std::abs(lb.content - content), std::abs(lb.total - (0.01 * mse + content))});
    const auto ra = to_raster(a, 0), rb = to_raster(b, 0);
    worst_value = std::max(worst_value, std::abs(content_loss(fx, ra, rb) -
                                                 oracle_content(fx, nn::from_raster(ra), nn::from_raster(rb), 0)));
  }
  auto a = random_tensor({2, 3, 8, 8}, 40);
  const auto b = random_tensor({2, 3, 8, 8}, 41);
  nn::Tensor grad;
  combined_loss(fx, w, a, b, &grad);
  auto oracle = [&](const nn::Tensor& x) {
    double t = 0;
    for (int n = 0; n < 2; ++n) t += (0.01 * oracle_mse(x, b, n) + oracle_content(fx, x, b, n)) / 2;
    return t;
  };
  const float eps = 1e-3f;
  double worst_rel = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float keep = a.data()[i];
    a.data()[i] = keep + eps;
    const double up = oracle(a);
    a.data()[i] = keep - eps;
    const double down = oracle(a);
    a.data()[i] = keep;
    const double fd = (up - down) / (2.0 * eps);
    worst_rel = std::max(worst_rel, std::abs(fd - grad.data()[i]) / std::max(std::abs(fd), 1e-4));
  }
  const double secs = seconds_since(t0);
  return {worst_value <= 1e-6 && worst_rel < 1e-2 && secs < 30.0,
          fmt("worst |loss - hand value| %.2e, worst gradient relative error %.2e (all %zu inputs), %.2f s",
              worst_value, worst_rel, a.size(), secs)};
}

std::pair<bool, std::string> anomaly_map_identity() {
  const auto t0 = Clock::now();
  const auto fx = FeatureExtractor::from_cache();
  const auto a = random_raster(64, 64, 7), b = random_raster(64, 64, 8);
  const auto self = anomaly_map(fx, a, a);
  bool zero = true;
  for (float v : self.values()) zero = zero && v == 0.0f;
  const bool symmetric = anomaly_map(fx, a, b) == anomaly_map(fx, b, a);
  const int channels = fx.extract(a, 12).shape().c;
  const double secs = seconds_since(t0);
  return {zero && symmetric && channels == 512 && secs < 60.0,
          fmt("self map all zero %s, symmetric %s, layer 12 has %d channels (%s backbone), %.2f s",
              zero ? "yes" : "no", symmetric ? "yes" : "no", channels,
              fx.pretrained() ? "pretrained" : "seeded random", secs)};
}

std::pair<bool, std::string> architecture_audit() {
  const auto shapes = intermediate_shapes(CaeConfig::full());
  std::vector<int> sides;
  int last_c = 0, last_side = 0, fc_in = 0, latent = 0;
  for (const auto& s : shapes) {
    if (s.layer.rfind("enc_conv", 0) == 0) {
      sides.push_back(s.height);
      last_c = s.channels;
      last_side = s.height;
    }
    if (s.layer.rfind("latent", 0) == 0) latent = s.channels;
  }
  fc_in = last_side * last_side * last_c;
  const bool trace = sides == std::vector<int>{128, 64, 32, 16, 8, 4, 2};
  ModelBundle bundle(CaeConfig::full());
  const auto z = encode(bundle, random_raster(256, 256, 3));
  const auto y = decode(bundle, z);
  bool open_unit = true;
  for (float v : y.pixels()) open_unit = open_unit && v > 0.0f && v < 1.0f;
  std::ostringstream trace_s;
  for (int s : sides) trace_s << s << ' ';
  return {trace && fc_in == 1024 && latent == 500 && z.size() == 500 && open_unit,
          fmt("encoder sides %s(from 256), pre-FC width %d, latent %d, encode length %zu, decode in (0,1) %s",
              trace_s.str().c_str(), fc_in, latent, z.size(), open_unit ? "yes" : "no")};
}

std::pair<bool, std::string> schedule() {
  TrainConfig cfg;  // 1000 epochs, 3 warmup
  const long per_epoch = 12, total = cfg.epochs * per_epoch, warm = cfg.warmup_epochs * per_epoch;
  const double start = lr_at(0, total, cfg), peak = lr_at(warm, total, cfg);
  const double last_epoch = lr_at(total - per_epoch, total, cfg), end = lr_at(total, total, cfg);
  const double mid = lr_at(warm + (total - warm) / 2, total, cfg);
  const bool pass = start == 1e-5 && std::abs(peak - 0.0072) < 1e-12 && std::abs(last_epoch - 1e-5) < 1e-7 &&
                    std::abs(end - 1e-5) < 1e-7 && std::abs(mid - 0.003605) <= 1e-6;
  return {pass, fmt("lr(0) %.6g, warmup end %.6g, final epoch %.9g, last step %.9g, cosine midpoint %.7g", start, peak,
                    last_epoch, end, mid)};
}

std::pair<bool, std::string> registration() {
  const auto t0 = Clock::now();
  const int side = 512;
  std::mt19937_64 rng(20);
  double worst_inf = 0, worst_reproj = 0;
  int failed = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto ref = textured_image(side, 300 + trial);
    const Eigen::Matrix3d known = random_homography(side, rng);
    const auto query = warp_perspective(ref, Homography(known), side, side);
    RegistrationConfig cfg;
    cfg.seed = trial;
    const auto r = register_image(query, ref, cfg);
    const double err = (by_h22(r.homography.matrix() * known) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    worst_inf = std::max(worst_inf, err);
    worst_reproj = std::max(worst_reproj, r.mean_reprojection_error);
    if (!(err < 1e-2 && r.mean_reprojection_error < 1.0)) ++failed;
  }
  return {failed == 0, fmt("%d/20 trials over tolerance (%d px textured boards), worst max-abs entry of H*H_known - I "
                           "%.4f (limit 0.01), worst mean reprojection %.3f px, %.1f s",
                           failed, side, worst_inf, worst_reproj, seconds_since(t0))};
}

std::pair<bool, std::string> partitioning() {
  const int w = 4096, h = 2816, side = 1024;
  const auto g = build_grid(w, h, side);
  std::set<int> xs, ys;
  std::vector<std::uint8_t> cover(static_cast<std::size_t>(w) * h, 0);
  for (const auto& r : g.regions) {
    xs.insert(r.x0);
    ys.insert(r.y0);
    for (int y = r.y0; y < r.y0 + r.side; ++y) {
      for (int x = r.x0; x < r.x0 + r.side; ++x) cover[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  std::size_t uncovered = 0;
  for (auto c : cover) uncovered += c == 0;
  const bool anchors = xs == std::set<int>{0, 1024, 2048, 3072} && ys == std::set<int>{0, 1024, 1792};
  return {g.regions.size() == 12 && anchors && uncovered == 0,
          fmt("%zu regions, x anchors {0,1024,2048,3072} %s, y anchors {0,1024,1792} %s, %zu uncovered pixels",
              g.regions.size(), xs == std::set<int>{0, 1024, 2048, 3072} ? "ok" : "wrong",
              ys == std::set<int>{0, 1024, 1792} ? "ok" : "wrong", uncovered)};
}

std::pair<bool, std::string> end_to_end() {
  const auto t0 = Clock::now();
  TempDir dir("acceptance_e2e");
  SyntheticSpec spec;  // 64 x 64 boards
  spec.kinds = {AnomalyKind::PastePatch};
  generate_synthetic(spec, 120, 40, 3, dir / "data");
  nlohmann::json j = {{"dataset", {{"root", "data"}, {"kind", "synthetic"}, {"split_seed", 0}}},
                      {"grid", {{"side", 64}, {"out_side", 64}}},
                      {"models_dir", "models"},
                      {"model", {{"profile", "toy"}}},
                      {"train",
                       {{"batch_size", 16}, {"epochs", 50}, {"warmup_epochs", 5}, {"seed", 1},
                        {"augmentation", {{"max_offset_px", 0}}}}},
                      {"evaluation", {{"output_dir", "eval"}}}};
  std::ofstream(dir / "config.json") << j.dump();
  const auto config = load_config(dir / "config.json");
  const auto fx = make_extractor(config);
  train_all(config, fx);
  const auto report = evaluate_all(config, fx, true);
  const double secs = seconds_since(t0);
  const auto& m = report.regions.at(0);
  const double auc = m.seg_auc.value_or(0), best_iou = m.best_iou.value_or(0), acc = m.det_accuracy.value_or(0);
  return {auc >= 0.90 && best_iou >= 0.30 && acc >= 0.9 && secs <= 900.0,
          fmt("segmentation ROC-AUC %.3f (>= 0.90), best IoU %.3f (>= 0.30), detection accuracy %.3f (>= 0.9) "
              "at threshold %.3f, %.0f s (<= 900), %s backbone",
              auc, best_iou, acc, m.best_threshold.value_or(-1.0f), secs, fx.pretrained() ? "pretrained" : "seeded random")};
}

std::pair<bool, std::string> threshold_monotonicity() {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  int violations = 0;
  for (int k = 0; k < 50; ++k) {
    FloatMap m(32, 32);
    for (auto& v : m.values()) v = u(rng);
    BinaryMask prev(32, 32, 1);
    std::size_t prev_count = prev.popcount();
    for (int i = 0; i <= 100; ++i) {
      const auto v = make_verdict("r", m, i / 100.0f);
      for (std::size_t p = 0; p < v.mask.values().size(); ++p) violations += v.mask.values()[p] > prev.values()[p];
      violations += v.anomalous_pixels > prev_count;
      prev = v.mask;
      prev_count = v.anomalous_pixels;
    }
  }
  return {violations == 0, fmt("%d nesting violations over 50 maps x 101 thresholds", violations)};
}

}  // namespace

int main() {
  double dj_worst = 0;
  int dj_cases = 0;
  criterion("metric oracle suite", [&] { return metric_suite(dj_worst, dj_cases); });
  criterion("dice-jaccard identity", [&] {
    return std::make_pair(dj_cases > 0 && dj_worst <= 1e-12,
                          fmt("worst |iou - f/(2-f)| %.2e over %d count sets", dj_worst, dj_cases));
  });
  criterion("loss correctness", loss_correctness);
  criterion("anomaly-map identity", anomaly_map_identity);
  criterion("architecture audit", architecture_audit);
  criterion("schedule", schedule);
  criterion("registration", registration);
  criterion("partitioning", partitioning);
  criterion("threshold monotonicity", threshold_monotonicity);
  criterion("end-to-end desk-scale", end_to_end);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
