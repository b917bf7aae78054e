#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pcb_sentinel/imaging.hpp"

namespace pcb_sentinel {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// One putative correspondence: a query pixel and the reference pixel it matched.
struct PointPair {
  Point2 query;
  Point2 reference;
};

/// Planar projective transform scaled so that h(2,2) == 1.
class Homography {
 public:
  Homography() : h_(Eigen::Matrix3d::Identity()) {}
  /// Normalizes by m(2,2); throws DegenerateConfigurationError when m(2,2)
  /// is ~0 or the matrix is singular (|det| <= 1e-12 after normalization).
  explicit Homography(const Eigen::Matrix3d& m);

  const Eigen::Matrix3d& matrix() const { return h_; }
  Point2 apply(Point2 p) const;
  Homography inverse() const { return Homography(h_.inverse()); }

  friend bool operator==(const Homography& a, const Homography& b) { return a.h_ == b.h_; }

 private:
  Eigen::Matrix3d h_;
};

struct HomographyEstimate {
  Homography homography;  // maps query -> reference
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
  double inlier_ratio = 0.0;
  double mean_reprojection_error = 0.0;  // over inliers, in reference pixels
};

struct RegistrationConfig {
  double ratio = 0.75;
  double reproj_threshold = 3.0;
  int max_iters = 2000;
  std::uint64_t seed = 0;
  double max_mean_reprojection_error = 3.0;
};

struct RegistrationResult {
  Raster warped;  // reference-sized
  Homography homography;
  int inlier_count = 0;
  double inlier_ratio = 0.0;
  double mean_reprojection_error = 0.0;
};

/// SIFT keypoints on luma copies, brute-force L2 matching, Lowe ratio test.
/// Pairs come back sorted by descriptor distance.
std::vector<PointPair> detect_and_match(const Raster& query, const Raster& reference, double ratio);

/// RANSAC over minimal 4-point sets followed by a least-squares refit on the
/// consensus set. Deterministic for a fixed seed.
HomographyEstimate estimate_homography(std::span<const PointPair> pairs, double reproj_threshold,
                                       int max_iters, std::uint64_t seed);

/// Direct linear transform (Hartley-normalized) over all given pairs.
Homography fit_homography_dlt(std::span<const PointPair> pairs);

/// Warps `img` into an out_h x out_w frame through `query_to_frame`;
/// pixels that fall outside the source are 0.
Raster warp_perspective(const Raster& img, const Homography& query_to_frame, int out_h, int out_w);

RegistrationResult register_image(const Raster& query, const Raster& reference,
                                  const RegistrationConfig& config = {});

}  // namespace pcb_sentinel
