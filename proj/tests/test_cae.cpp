#include <gtest/gtest.h>

#include <cmath>

#include "pcb_sentinel/cae.hpp"
#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/nn/adam.hpp"
#include "support.hpp"

using namespace pcb_sentinel;
using testing_support::random_raster;
using testing_support::TempDir;

namespace {

std::vector<LayerShape> of_kind(const std::vector<LayerShape>& all, const std::string& prefix) {
  std::vector<LayerShape> out;
  for (const auto& s : all) {
    if (s.layer.rfind(prefix, 0) == 0) out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Architecture, DefaultTrace) {
  const auto shapes = intermediate_shapes(CaeConfig::full());
  const auto enc = of_kind(shapes, "enc_conv");
  const auto dec = of_kind(shapes, "dec_tconv");
  ASSERT_EQ(enc.size(), 7u);
  ASSERT_EQ(dec.size(), 7u);
  int side = 256;
  for (const auto& s : enc) {
    side /= 2;
    EXPECT_EQ(s.height, side) << s.layer;
    EXPECT_EQ(s.width, side) << s.layer;
  }
  EXPECT_EQ(enc.back().channels, 256);
  EXPECT_EQ(enc.back().height * enc.back().width * enc.back().channels, 1024);
  for (const auto& s : dec) {
    side *= 2;
    EXPECT_EQ(s.height, side) << s.layer;
  }
  EXPECT_EQ(dec.back().channels, 3);
  EXPECT_EQ(dec.back().height, 256);
  const auto fc = of_kind(shapes, "enc_fc");
  ASSERT_EQ(fc.size(), 1u);
  EXPECT_EQ(fc[0].channels, 1024);
  EXPECT_EQ(of_kind(shapes, "latent")[0].channels, 500);
}

TEST(Architecture, HalvingRule) {
  auto c = CaeConfig::full();
  c.input_side = 128;
  const auto enc = of_kind(intermediate_shapes(c), "enc_conv");
  EXPECT_EQ(enc.back().height, 1);
  EXPECT_EQ(enc.back().channels, 256);
  EXPECT_EQ(CaeConfig::toy().bottleneck_side(), 4);
}

TEST(Architecture, Validation) {
  auto c = CaeConfig::full();
  c.input_side = 100;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = CaeConfig::full();
  c.kernel = 4;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = CaeConfig::full();
  c.encoder_filters.clear();
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_NO_THROW(CaeConfig::toy().validate());
}

TEST(Config, JsonRoundTrip) {
  auto c = CaeConfig::toy();
  c.init_seed = 99;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<CaeConfig>(), c);
  EXPECT_THROW((nlohmann::json{{"profile", "huge"}}.get<CaeConfig>()), ArgumentError);
}

class FullModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { model_ = new CaeModel(CaeConfig::full()); }
  static void TearDownTestSuite() { delete model_; }
  static CaeModel* model_;
};
CaeModel* FullModel::model_ = nullptr;

TEST_F(FullModel, EncodeDecode) {
  ModelBundle b(CaeConfig::full());
  b.model = *model_;
  const auto x = random_raster(256, 256, 1);
  const auto z = encode(b, x);
  ASSERT_EQ(z.size(), 500u);
  for (float v : z) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(encode(b, x), z);

  const auto y = decode(b, LatentVector(500, 0.0f));
  EXPECT_EQ(y.height(), 256);
  EXPECT_EQ(y.width(), 256);
  EXPECT_EQ(y.channels(), 3);
  for (float v : y.pixels()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  const auto r = reconstruct(b, x);
  EXPECT_EQ(r.height(), x.height());
  EXPECT_EQ(r.channels(), x.channels());
  EXPECT_THROW(decode(b, LatentVector(499, 0.0f)), ShapeError);
  EXPECT_THROW(encode(b, random_raster(128, 128, 2)), ShapeError);
}

TEST(Model, ToyOverfitsOneImage) {
  // Plain MSE on a single image; the decoder has to land within 1e-3.
  auto cfg = CaeConfig::toy();
  CaeModel model(cfg);
  const auto img = random_raster(64, 64, 3);
  // Smooth the target a little: a white-noise image is not a fair overfit target.
  Raster target(64, 64, ColorSpace::Rgb);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int c = 0; c < 3; ++c) target.at(y, x, c) = 0.5f + 0.4f * std::sin(0.2f * x + 0.1f * y + c) * img.at(y / 8 * 8, x / 8 * 8, c);
    }
  }
  const nn::Tensor t = nn::from_raster(target);
  nn::Adam adam(model.net().params());
  double mse = 1.0;
  for (int step = 0; step < 400 && mse >= 1e-3; ++step) {
    nn::Tape tape;
    model.net().zero_grad();
    const nn::Tensor y = model.net().forward_train(t, tape);
    nn::Tensor g(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) g.data()[i] = 2.0f * (y.data()[i] - t.data()[i]) / y.size();
    model.net().backward(g, tape);
    adam.step(1e-3f);
  }
  const nn::Tensor out = model.reconstruct(t);
  mse = 0;
  for (std::size_t i = 0; i < out.size(); ++i) mse += std::pow(out.data()[i] - t.data()[i], 2);
  mse /= out.size();
  EXPECT_LT(mse, 1e-3);
}

TEST(Bundle, RoundTrip) {
  TempDir dir("cae");
  auto cfg = CaeConfig::toy();
  cfg.init_seed = 5;
  ModelBundle b(cfg);
  b.region_id = "grid2_3";
  b.norm_range = ValueRange{0.25f, 3.5f};
  b.threshold = 0.4f;
  b.train_manifest.epochs = 7;
  b.train_manifest.dataset_hash = "abc";
  const auto path = save_bundle(b, dir.path());
  EXPECT_EQ(path, dir / "grid2_3");
  const auto back = load_bundle(path);
  EXPECT_EQ(back.region_id, "grid2_3");
  EXPECT_EQ(back.config(), cfg);
  ASSERT_TRUE(back.norm_range);
  EXPECT_EQ(back.norm_range->min, 0.25f);
  EXPECT_EQ(back.norm_range->max, 3.5f);
  EXPECT_EQ(back.threshold, 0.4f);
  EXPECT_EQ(back.train_manifest.epochs, 7);
  const auto x = random_raster(64, 64, 6);
  EXPECT_EQ(reconstruct(back, x), reconstruct(b, x));

  ModelBundle anon(cfg);
  EXPECT_THROW(save_bundle(anon, dir.path()), ArgumentError);
  EXPECT_THROW(load_bundle(dir / "nothing"), IOError);
}

TEST(Model, SeedsDiffer) {
  auto a = CaeConfig::toy(), b = CaeConfig::toy();
  b.init_seed = 1;
  const auto x = nn::from_raster(random_raster(64, 64, 7));
  EXPECT_NE(CaeModel(a).encode(x), CaeModel(b).encode(x));
  EXPECT_EQ(CaeModel(a).encode(x), CaeModel(a).encode(x));
}
