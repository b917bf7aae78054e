#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/training.hpp"
#include "support.hpp"

using namespace pcb_sentinel;
using testing_support::random_raster;
using testing_support::stub_extractor;

TEST(Corruption, RederivedRectanglesCoverExactlyTheMaskedPixels) {
  CorruptionConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Raster ones(40, 30, ColorSpace::Rgb, 1.0f);
    const auto out = corrupt(ones, cfg, seed);
    // Independent replay of the documented draw order.
    std::mt19937_64 rng(seed);
    const int count = std::uniform_int_distribution<int>(cfg.min_rects, cfg.max_rects)(rng);
    std::uniform_real_distribution<float> frac(cfg.min_side_fraction, cfg.max_side_fraction);
    std::set<std::pair<int, int>> covered;
    for (int i = 0; i < count; ++i) {
      const int w = std::max(1, static_cast<int>(std::lround(frac(rng) * 30)));
      const int h = std::max(1, static_cast<int>(std::lround(frac(rng) * 40)));
      const int x0 = std::uniform_int_distribution<int>(0, 30 - w)(rng);
      const int y0 = std::uniform_int_distribution<int>(0, 40 - h)(rng);
      for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) covered.insert({y, x});
      }
    }
    std::size_t zeros = 0;
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 30; ++x) {
        const bool masked = out.at(y, x, 0) == 0.0f;
        zeros += masked;
        EXPECT_EQ(masked, covered.count({y, x}) == 1);
        EXPECT_EQ(out.at(y, x, 1), out.at(y, x, 0));
      }
    }
    EXPECT_EQ(zeros, covered.size());
  }
}

TEST(Corruption, DegenerateConfigs) {
  const auto img = random_raster(16, 16, 1);
  CorruptionConfig none;
  none.min_rects = none.max_rects = 0;
  EXPECT_EQ(corrupt(img, none, 3), img);
  CorruptionConfig full;
  full.min_rects = full.max_rects = 1;
  full.min_side_fraction = full.max_side_fraction = 1.0f;
  full.fill_value = 0.3f;
  const auto filled = corrupt(img, full, 3);
  for (float v : filled.pixels()) EXPECT_EQ(v, 0.3f);
  CorruptionConfig bad;
  bad.min_rects = 3;
  bad.max_rects = 1;
  EXPECT_THROW(bad.validate(), ArgumentError);
  EXPECT_EQ(corrupt(img, CorruptionConfig{}, 9), corrupt(img, CorruptionConfig{}, 9));
}

TEST(Schedule, Endpoints) {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.warmup_epochs = 3;
  const long total = 100 * 12, warm = 3 * 12;
  EXPECT_DOUBLE_EQ(lr_at(0, total, cfg), 1e-5);
  EXPECT_NEAR(lr_at(warm, total, cfg), 0.0072, 1e-12);
  EXPECT_NEAR(lr_at(total, total, cfg), 1e-5, 1e-7);
  EXPECT_NEAR(lr_at(warm + (total - warm) / 2, total, cfg), 1e-5 + 0.5 * (0.0072 - 1e-5), 1e-6);
  EXPECT_NEAR(lr_at(warm / 2, total, cfg), 1e-5 + 0.5 * (0.0072 - 1e-5), 1e-9);
  EXPECT_THROW(lr_at(total + 1, total, cfg), ArgumentError);
  EXPECT_THROW(lr_at(-1, total, cfg), ArgumentError);
  // Rises through warmup, falls afterwards.
  for (long s = 1; s <= warm; ++s) EXPECT_GT(lr_at(s, total, cfg), lr_at(s - 1, total, cfg));
  for (long s = warm + 1; s <= total; ++s) EXPECT_LE(lr_at(s, total, cfg), lr_at(s - 1, total, cfg));
}

TEST(Config, JsonAndValidation) {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.corruption.max_rects = 5;
  nlohmann::json j;
  to_json(j, cfg);
  TrainConfig back;
  from_json(j, back);
  EXPECT_EQ(back.epochs, 12);
  EXPECT_EQ(back.corruption.max_rects, 5);
  cfg.warmup_epochs = 12;
  EXPECT_THROW(cfg.validate(), ArgumentError);
}

namespace {

TrainConfig small_config(int epochs) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.warmup_epochs = 1;
  cfg.lr_peak = 2e-3f;
  cfg.seed = 4;
  return cfg;
}

Raster smooth_board(std::uint64_t seed) {
  const auto noise = random_raster(8, 8, seed);
  Raster out(64, 64, ColorSpace::Rgb);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.2f + 0.6f * noise.at(y / 8, x / 8, c);
    }
  }
  return out;
}

}  // namespace

TEST(TrainRegion, OverfitsOneRepeatedImage) {
  const auto fx = stub_extractor();
  const InMemorySampler train(std::vector<Raster>(16, smooth_board(1)));
  auto cae = CaeConfig::toy();
  std::vector<double> losses;
  TrainOptions opts;
  opts.region_id = "grid1_1";
  opts.on_epoch = [&](const EpochRecord& r) { losses.push_back(r.train_loss); };
  opts.corruptor = [](const Raster& clean, std::mt19937_64&) { return clean; };
  auto cfg = small_config(200);
  cfg.lr_peak = TrainConfig{}.lr_peak;
  const auto bundle = train_region(train, nullptr, cae, cfg, fx, opts);
  ASSERT_EQ(losses.size(), 200u);
  EXPECT_LT(losses.back(), 1e-2 * losses.front());
  // Trend: each quarter averages lower than the one before.
  double prev = INFINITY;
  for (int q = 0; q < 4; ++q) {
    double s = 0;
    for (int i = q * 50; i < (q + 1) * 50; ++i) s += losses[i];
    EXPECT_LT(s, prev);
    prev = s;
  }
  EXPECT_EQ(bundle.region_id, "grid1_1");
  EXPECT_EQ(bundle.train_manifest.epochs, 200);
  EXPECT_GE(bundle.train_manifest.best_epoch, 1);
  EXPECT_EQ(bundle.train_manifest.extractor_hash, "stub");
  EXPECT_TRUE(bundle.train_manifest.settings.contains("steps_per_epoch"));
}

TEST(TrainRegion, DeterministicForFixedSeed) {
  const auto fx = stub_extractor();
  std::vector<Raster> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(smooth_board(10 + i));
  const InMemorySampler train(imgs);
  const InMemorySampler val({smooth_board(30), smooth_board(31)});
  const auto cfg = small_config(3);
  std::ostringstream log_a, log_b;
  TrainOptions a, b;
  a.log = &log_a;
  b.log = &log_b;
  const auto ma = train_region(train, &val, CaeConfig::toy(), cfg, fx, a);
  const auto mb = train_region(train, &val, CaeConfig::toy(), cfg, fx, b);
  EXPECT_EQ(ma.train_manifest.final_val_loss, mb.train_manifest.final_val_loss);
  EXPECT_EQ(log_a.str(), log_b.str());
  std::istringstream lines(log_a.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), ++n);
    EXPECT_TRUE(j.contains("val_loss"));
  }
  EXPECT_EQ(n, 3);
}

TEST(TrainRegion, CorruptedInputCleanTarget) {
  const auto fx = stub_extractor();
  const auto board = smooth_board(40);
  const InMemorySampler train(std::vector<Raster>(4, board));
  TrainOptions opts;
  int calls = 0;
  opts.corruptor = [&](const Raster& clean, std::mt19937_64&) {
    EXPECT_EQ(clean, board);  // the corruptor sees the clean sample
    ++calls;
    return Raster(clean.height(), clean.width(), clean.color_space(), 0.0f);
  };
  train_region(train, nullptr, CaeConfig::toy(), small_config(2), fx, opts);
  EXPECT_EQ(calls, 8);

  Trainer trainer(CaeConfig::toy(), small_config(2), fx);
  const auto loss = trainer.train_step(nn::from_raster(Raster(64, 64, ColorSpace::Rgb, 0.0f)), nn::from_raster(board), 1e-3f);
  EXPECT_GT(loss.mse, 0.0);
  EXPECT_EQ(trainer.steps(), 1);
}

TEST(TrainRegion, Errors) {
  const auto fx = stub_extractor();
  const InMemorySampler empty(std::vector<Raster>{});
  EXPECT_THROW(train_region(empty, nullptr, CaeConfig::toy(), small_config(2), fx), EmptyDatasetError);
  const InMemorySampler train(std::vector<Raster>(2, smooth_board(2)));
  TrainOptions poison;
  poison.corruptor = [](const Raster& clean, std::mt19937_64&) {
    Raster r = clean;
    r.at(0, 0, 0) = NAN;
    return r;
  };
  EXPECT_THROW(train_region(train, nullptr, CaeConfig::toy(), small_config(2), fx, poison), DivergenceError);
}

TEST(Samplers, BoardRegionJitterIsClamped) {
  testing_support::TempDir dir("sampler");
  const auto board = random_raster(96, 96, 5);
  save_raster(dir / "b.png", board);
  const RegionSpec spec{"grid1_1", 0, 0, 64, 1, 1};
  const BoardRegionSampler fixed({dir / "b.png"}, spec, 32, 0, true);
  const BoardRegionSampler jitter({dir / "b.png"}, spec, 32, 16, false);
  EXPECT_TRUE(fixed.deterministic());
  EXPECT_FALSE(jitter.deterministic());
  std::mt19937_64 rng(1);
  const auto a = fixed.sample(0, rng);
  EXPECT_EQ(a, extract_region(load_raster(dir / "b.png"), spec, 32));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(jitter.sample(0, rng).height(), 32);
  EXPECT_NE(fixed.fingerprint(), InMemorySampler({a}).fingerprint());
}

TEST(Samplers, MvtecAugmentStaysInRange) {
  std::mt19937_64 rng(3);
  const auto img = random_raster(40, 40, 6);
  for (int i = 0; i < 10; ++i) {
    const auto out = augment_mvtec(img, MvtecAugment{}, rng);
    EXPECT_EQ(out.height(), 40);
    for (float v : out.pixels()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  const AugmentedImageSampler off({img}, 32, MvtecAugment{}, false);
  EXPECT_TRUE(off.deterministic());
  EXPECT_EQ(off.sample(0, rng).height(), 32);
}
