#include <gtest/gtest.h>

#include <cmath>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/perceptual.hpp"
#include "support.hpp"

using namespace pcb_sentinel;
using testing_support::naive_stub_forward;
using testing_support::random_raster;
using testing_support::random_tensor;
using testing_support::stub_extractor;

namespace {

// Content term recomputed from the double-precision stub forward pass.
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

}  // namespace

TEST(Extractor, StubMatchesLoopForward) {
  const auto fx = stub_extractor();
  const auto x = random_tensor({2, 3, 9, 8}, 1);
  const auto many = fx.extract_many(x, {3, 1, 2});
  for (int n = 0; n < 2; ++n) {
    const auto ref = naive_stub_forward(fx, x, n);
    const int order[3] = {3, 1, 2};
    for (int k = 0; k < 3; ++k) {
      const int layer = order[k];
      const auto& t = many[k];
      ASSERT_EQ(t.shape().c, ref.c[layer - 1]);
      ASSERT_EQ(t.shape().h, ref.h[layer - 1]);
      const auto s = t.sample(n);
      for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], ref.taps[layer - 1][i], 1e-5);
    }
  }
  EXPECT_THROW(fx.extract(x, 0), LayerIndexError);
  EXPECT_THROW(fx.extract(x, 4), LayerIndexError);
}

TEST(ContentLoss, MatchesOracle) {
  const auto fx = stub_extractor();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_raster(10, 12, 10 + seed), b = random_raster(10, 12, 20 + seed);
    const auto ta = nn::from_raster(a), tb = nn::from_raster(b);
    EXPECT_NEAR(content_loss(fx, a, b), oracle_content(fx, ta, tb, 0), 1e-6);
    EXPECT_NEAR(content_loss(fx, a, b), content_loss(fx, b, a), 1e-9);
    EXPECT_EQ(content_loss(fx, a, a), 0.0);
  }
  EXPECT_THROW(content_loss(fx, random_raster(8, 8, 1), random_raster(8, 9, 1)), ShapeMismatchError);
}

TEST(CombinedLoss, Arithmetic) {
  const auto fx = stub_extractor();
  const Raster zero(8, 8, ColorSpace::Rgb, 0.0f), half(8, 8, ColorSpace::Rgb, 0.5f);
  LossWeights mse_only{0.01f, 0.0f};
  EXPECT_NEAR(combined_loss(fx, mse_only, zero, half), 0.0025, 1e-9);
  LossWeights feat_only{0.0f, 1.0f};
  EXPECT_NEAR(combined_loss(fx, feat_only, zero, half), content_loss(fx, zero, half), 1e-9);
  EXPECT_EQ(combined_loss(fx, LossWeights{}, half, half), 0.0);
  EXPECT_THROW((LossWeights{0.0f, 0.0f}.validate()), ArgumentError);
  EXPECT_THROW((LossWeights{-1.0f, 1.0f}.validate()), ArgumentError);
}

TEST(CombinedLoss, BatchedMatchesOracle) {
  const auto fx = stub_extractor();
  const LossWeights w;
  const auto a = random_tensor({3, 3, 8, 8}, 30), b = random_tensor({3, 3, 8, 8}, 31);
  const auto lb = combined_loss(fx, w, a, b);
  double mse = 0, content = 0;
  for (int n = 0; n < 3; ++n) {
    mse += oracle_mse(a, b, n) / 3;
    content += oracle_content(fx, a, b, n) / 3;
  }
  EXPECT_NEAR(lb.mse, mse, 1e-6);
  EXPECT_NEAR(lb.content, content, 1e-6);
  EXPECT_NEAR(lb.total, 0.01 * mse + content, 1e-6);
  // Cached target features give the same answer.
  const auto feats = fx.extract_many(b, fx.loss_layers());
  EXPECT_NEAR(combined_loss(fx, w, a, b, nullptr, &feats).total, lb.total, 1e-9);
}

TEST(CombinedLoss, GradientMatchesFiniteDifference) {
  const auto fx = stub_extractor();
  const LossWeights w;
  auto a = random_tensor({2, 3, 8, 8}, 40);
  const auto b = random_tensor({2, 3, 8, 8}, 41);
  nn::Tensor grad;
  combined_loss(fx, w, a, b, &grad);
  ASSERT_EQ(grad.shape(), a.shape());
  // Double-precision oracle loss so the finite difference is clean.
  auto oracle = [&](const nn::Tensor& x) {
    double t = 0;
    for (int n = 0; n < 2; ++n) t += (0.01 * oracle_mse(x, b, n) + oracle_content(fx, x, b, n)) / 2;
    return t;
  };
  const float eps = 1e-3f;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); i += 3) {
    const float keep = a.data()[i];
    a.data()[i] = keep + eps;
    const double up = oracle(a);
    a.data()[i] = keep - eps;
    const double down = oracle(a);
    a.data()[i] = keep;
    const double fd = (up - down) / (2.0 * eps);
    const double rel = std::abs(fd - grad.data()[i]) / std::max(std::abs(fd), 1e-4);
    worst = std::max(worst, rel);
  }
  EXPECT_LT(worst, 1e-2);
}

TEST(CombinedLoss, BackboneStaysFrozen) {
  const auto fx = stub_extractor();
  const auto before = fx.net().state();
  std::vector<nn::Tensor> copy;
  for (const auto& [name, t] : before) copy.push_back(*t);
  nn::Tensor grad;
  combined_loss(fx, LossWeights{}, random_tensor({2, 3, 8, 8}, 50), random_tensor({2, 3, 8, 8}, 51), &grad);
  const auto after = fx.net().state();
  for (std::size_t i = 0; i < copy.size(); ++i) EXPECT_EQ(*after[i].second, copy[i]);
}

TEST(AnomalyMap, IdentitySymmetryAndOracle) {
  const auto fx = stub_extractor();
  const auto a = random_raster(12, 12, 60), b = random_raster(12, 12, 61);
  const auto m = anomaly_map(fx, a, b);
  EXPECT_EQ(m.height(), 6);
  EXPECT_EQ(m.width(), 6);
  EXPECT_EQ(m, anomaly_map(fx, b, a));
  const auto zero = anomaly_map(fx, a, a);
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  const auto fa = naive_stub_forward(fx, nn::from_raster(a), 0), fb = naive_stub_forward(fx, nn::from_raster(b), 0);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      double s = 0;
      for (int c = 0; c < fa.c[1]; ++c) s += std::abs(fa.taps[1][(c * 6 + y) * 6 + x] - fb.taps[1][(c * 6 + y) * 6 + x]);
      EXPECT_NEAR(m.at(y, x), s, 1e-5);
      EXPECT_GE(m.at(y, x), 0.0f);
    }
  }
}

TEST(Vgg19, ChannelsAndLocality) {
  const auto fx = FeatureExtractor::vgg19();
  EXPECT_EQ(fx.depth(), 16);
  EXPECT_EQ(fx.anomaly_layer(), 12);
  const auto t = fx.extract(random_raster(64, 64, 70), 12);
  EXPECT_EQ(t.shape().c, 512);
  EXPECT_EQ(t.shape().h, 8);
  EXPECT_TRUE(t.all_finite());
  const int published[16] = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512};
  const auto all = fx.extract_many(nn::from_raster(random_raster(32, 32, 71)),
                                   {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  for (int j = 0; j < 16; ++j) EXPECT_EQ(all[j].shape().c, published[j]) << "layer " << j + 1;
  EXPECT_THROW(fx.extract(random_raster(32, 32, 1), 17), LayerIndexError);

  // One 16x16 block changed: the map peaks over it (8x8 cells at 64 px, block covers cells 4..5).
  const auto a = random_raster(64, 64, 72);
  auto b = a;
  for (int y = 32; y < 48; ++y) {
    for (int x = 32; x < 48; ++x) {
      for (int c = 0; c < 3; ++c) b.at(y, x, c) = 1.0f - a.at(y, x, c);
    }
  }
  const auto m = anomaly_map(fx, b, a);
  int by = 0, bx = 0;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (m.at(y, x) > m.at(by, bx)) by = y, bx = x;
    }
  }
  EXPECT_GE(by, 3);
  EXPECT_LE(by, 6);
  EXPECT_GE(bx, 3);
  EXPECT_LE(bx, 6);
  EXPECT_EQ(fx.extract(a, 12), fx.extract(a, 12));
}

TEST(Vgg19, FullSizeRegionHas512Channels) {
  const auto fx = FeatureExtractor::vgg19();
  const auto t = fx.extract(random_raster(256, 256, 80), 12);
  EXPECT_EQ(t.shape().c, 512);
  EXPECT_EQ(t.shape().h, 32);
}
