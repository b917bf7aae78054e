#include <gtest/gtest.h>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/registration.hpp"
#include "support.hpp"

using namespace pcb_sentinel;
using testing_support::random_homography;
using testing_support::textured_image;

namespace {

std::vector<PointPair> pairs_from(const Eigen::Matrix3d& h, const std::vector<Point2>& pts) {
  std::vector<PointPair> out;
  for (const auto& p : pts) {
    const Eigen::Vector3d q = h * Eigen::Vector3d(p.x, p.y, 1.0);
    out.push_back({p, {q.x() / q.z(), q.y() / q.z()}});
  }
  return out;
}

Eigen::Matrix3d normalized(const Eigen::Matrix3d& m) { return m / m(2, 2); }

}  // namespace

TEST(Homography, NormalizesAndRejectsSingular) {
  Eigen::Matrix3d m;
  m << 2, 0, 4, 0, 2, 6, 0, 0, 2;
  const Homography h(m);
  EXPECT_EQ(h.matrix()(2, 2), 1.0);
  EXPECT_EQ(h.matrix()(0, 2), 2.0);
  const auto p = h.apply({1, 1});
  EXPECT_DOUBLE_EQ(p.x, 3.0);
  EXPECT_DOUBLE_EQ(p.y, 4.0);
  Eigen::Matrix3d z = Eigen::Matrix3d::Identity();
  z(2, 2) = 0.0;
  EXPECT_THROW(Homography{z}, DegenerateConfigurationError);
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  s(2, 2) = 1.0;
  EXPECT_THROW(Homography{s}, DegenerateConfigurationError);
}

TEST(Estimate, FourExactCorrespondences) {
  Eigen::Matrix3d h;
  h << 1.1, 0.05, 12.0, -0.03, 0.95, -7.0, 1e-4, -2e-4, 1.0;
  const auto pairs = pairs_from(h, {{10, 10}, {200, 15}, {190, 180}, {20, 170}});
  const auto est = estimate_homography(pairs, 3.0, 100, 1);
  const Eigen::Matrix3d d = est.homography.matrix() - h;
  EXPECT_LT(d.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(est.inlier_count, 4);
}

TEST(Estimate, IdentityCorrespondences) {
  const auto pairs = pairs_from(Eigen::Matrix3d::Identity(), {{0, 0}, {50, 3}, {47, 61}, {5, 40}, {25, 25}});
  const auto est = estimate_homography(pairs, 1.0, 50, 0);
  EXPECT_LT((est.homography.matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Estimate, RobustToOutliers) {
  Eigen::Matrix3d h;
  h << 0.97, -0.08, 20.0, 0.07, 1.02, 5.0, -5e-5, 3e-5, 1.0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 400.0);
  std::vector<Point2> pts;
  for (int i = 0; i < 20; ++i) pts.push_back({u(rng), u(rng)});
  auto pairs = pairs_from(h, pts);
  for (int i = 0; i < 10; ++i) pairs.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  const auto est = estimate_homography(pairs, 3.0, 2000, 7);
  EXPECT_GE(est.inlier_count, 20);
  EXPECT_LT((est.homography.matrix() - h).cwiseAbs().maxCoeff(), 1e-3);
  for (int i = 0; i < 20; ++i) EXPECT_TRUE(est.inliers[i]);
  // Same seed, same answer, bit for bit.
  const auto again = estimate_homography(pairs, 3.0, 2000, 7);
  EXPECT_EQ(again.homography, est.homography);
}

TEST(Estimate, DegenerateAndNoConsensus) {
  std::vector<PointPair> collinear;
  for (int i = 0; i < 6; ++i) collinear.push_back({{double(i), double(2 * i)}, {double(i), double(2 * i)}});
  EXPECT_THROW(estimate_homography(collinear, 3.0, 200, 0), DegenerateConfigurationError);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::vector<PointPair> noise;
  for (int i = 0; i < 60; ++i) noise.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  EXPECT_THROW(estimate_homography(noise, 1.0, 500, 0), NoConsensusError);
  EXPECT_THROW(estimate_homography(std::vector<PointPair>(3), 3.0, 10, 0), ArgumentError);
}

TEST(Matching, SelfMatchHasZeroOffsets) {
  const auto img = textured_image(160, 1);
  const auto pairs = detect_and_match(img, img, 0.75);
  ASSERT_GE(pairs.size(), 4u);
  for (const auto& p : pairs) {
    EXPECT_NEAR(p.query.x, p.reference.x, 1e-3);
    EXPECT_NEAR(p.query.y, p.reference.y, 1e-3);
  }
}

TEST(Matching, ConstantImageHasNoFeatures) {
  const Raster flat(128, 128, ColorSpace::Rgb, 0.5f);
  EXPECT_THROW(detect_and_match(flat, flat, 0.75), InsufficientFeaturesError);
  EXPECT_THROW(register_image(flat, flat), InsufficientFeaturesError);
  const Raster tiny(32, 32, ColorSpace::Gray, 0.5f);
  EXPECT_THROW(detect_and_match(tiny, tiny, 0.75), ArgumentError);
}

TEST(Matching, RotatedCopyConsistentWithKnownRotation) {
  const int side = 256;
  const auto ref = textured_image(side, 2);
  const double a = 10.0 * 3.14159265358979 / 180.0, c = side / 2.0;
  Eigen::Matrix3d rot;
  rot << std::cos(a), -std::sin(a), c - c * std::cos(a) + c * std::sin(a), std::sin(a), std::cos(a),
      c - c * std::sin(a) - c * std::cos(a), 0, 0, 1;
  // query = ref warped by rot, so a query point q corresponds to rot^-1 q in the reference.
  const auto query = warp_perspective(ref, Homography(rot), side, side);
  const auto pairs = detect_and_match(query, ref, 0.75);
  ASSERT_GE(pairs.size(), 4u);
  const Eigen::Matrix3d inv = rot.inverse();
  int consistent = 0;
  for (const auto& p : pairs) {
    const Eigen::Vector3d r = inv * Eigen::Vector3d(p.query.x, p.query.y, 1.0);
    consistent += std::hypot(r.x() / r.z() - p.reference.x, r.y() / r.z() - p.reference.y) < 2.0;
  }
  EXPECT_GE(consistent, 4);
  EXPECT_GT(consistent, static_cast<int>(pairs.size()) * 8 / 10);
}

TEST(Register, SelfRegistration) {
  const auto img = textured_image(192, 3);
  const auto r = register_image(img, img);
  EXPECT_LT(r.mean_reprojection_error, 0.5);
  EXPECT_EQ(r.warped.height(), 192);
  EXPECT_LT((r.homography.matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LE(r.inlier_ratio, 1.0);
  EXPECT_GT(r.inlier_count, 0);
}

TEST(Register, RecoversKnownWarp) {
  const int side = 256;
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    const auto ref = textured_image(side, 100 + trial);
    const Eigen::Matrix3d known = random_homography(side, rng);
    const auto query = warp_perspective(ref, Homography(known), side, side);
    RegistrationConfig cfg;
    cfg.seed = trial;
    const auto r = register_image(query, ref, cfg);
    const Eigen::Matrix3d comp = normalized(r.homography.matrix() * known);
    EXPECT_LT((comp - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-2) << "trial " << trial;
    EXPECT_LT(r.mean_reprojection_error, 1.0);
  }
}

TEST(Register, QualityCeiling) {
  const auto img = textured_image(160, 4);
  RegistrationConfig cfg;
  cfg.max_mean_reprojection_error = -1.0;  // nothing can pass
  EXPECT_THROW(register_image(img, img, cfg), RegistrationQualityError);
}

TEST(Warp, OutOfFrameIsZero) {
  const Raster img(64, 64, ColorSpace::Gray, 1.0f);
  Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
  shift(0, 2) = 20.0;  // content moves right by 20
  const auto w = warp_perspective(img, Homography(shift), 64, 64);
  EXPECT_EQ(w.at(10, 5), 0.0f);
  EXPECT_NEAR(w.at(10, 40), 1.0f, 1e-6);
}
