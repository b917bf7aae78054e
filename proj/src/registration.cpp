#include "pcb_sentinel/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <opencv2/features2d.hpp>
#include <opencv2/imgproc.hpp>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

namespace {

constexpr int kMinimalSet = 4;
constexpr double kMinConsensusRatio = 0.2;

struct Normalizer {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
};

// Translate the centroid to the origin and scale to mean distance sqrt(2).
Normalizer make_normalizer(std::span<const Point2> pts) {
  double cx = 0, cy = 0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean = 0;
  for (const auto& p : pts) mean += std::hypot(p.x - cx, p.y - cy);
  mean /= static_cast<double>(pts.size());
  const double s = mean > 0 ? std::sqrt(2.0) / mean : 1.0;
  Normalizer n;
  n.t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return n;
}

Point2 transform(const Eigen::Matrix3d& m, Point2 p) {
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  return {(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w, (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
}

double reprojection_error(const Eigen::Matrix3d& m, const PointPair& pp) {
  const Point2 p = transform(m, pp.query);
  const double e = std::hypot(p.x - pp.reference.x, p.y - pp.reference.y);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

// Raw (unnormalized scale) DLT solution; returns false when the system is
// rank-deficient.
bool solve_dlt(std::span<const PointPair> pairs, Eigen::Matrix3d& out) {
  std::vector<Point2> q, r;
  q.reserve(pairs.size());
  r.reserve(pairs.size());
  for (const auto& p : pairs) {
    q.push_back(p.query);
    r.push_back(p.reference);
  }
  const Normalizer nq = make_normalizer(q);
  const Normalizer nr = make_normalizer(r);

  Eigen::MatrixXd a(2 * pairs.size(), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Point2 s = transform(nq.t, q[i]);
    const Point2 d = transform(nr.t, r[i]);
    a.row(2 * i) << -s.x, -s.y, -1, 0, 0, 0, d.x * s.x, d.x * s.y, d.x;
    a.row(2 * i + 1) << 0, 0, 0, -s.x, -s.y, -1, d.y * s.x, d.y * s.y, d.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A minimal set yields an 8x9 system whose 8th singular value collapses
  // when the configuration is degenerate.
  if (sv.size() >= 8 && sv(7) < 1e-9 * std::max(1.0, sv(0))) return false;
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d m = nr.t.inverse() * hn * nq.t;
  if (std::abs(m(2, 2)) < 1e-12) return false;
  m /= m(2, 2);
  if (std::abs(m.determinant()) <= 1e-12 || !m.allFinite()) return false;
  out = m;
  return true;
}

bool collinear(Point2 a, Point2 b, Point2 c) {
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  const double scale = std::max({1.0, std::hypot(b.x - a.x, b.y - a.y) * std::hypot(c.x - a.x, c.y - a.y)});
  return std::abs(cross) <= 1e-6 * scale;
}

bool degenerate_sample(std::span<const PointPair> pairs, const std::array<std::size_t, 4>& idx) {
  for (int side = 0; side < 2; ++side) {
    auto pt = [&](int k) { return side == 0 ? pairs[idx[k]].query : pairs[idx[k]].reference; };
    for (int i = 0; i < 4; ++i) {
      for (int j = i + 1; j < 4; ++j) {
        for (int k = j + 1; k < 4; ++k) {
          if (collinear(pt(i), pt(j), pt(k))) return true;
        }
      }
    }
  }
  return false;
}

int count_inliers(const Eigen::Matrix3d& m, std::span<const PointPair> pairs, double threshold,
                  std::vector<std::uint8_t>& mask) {
  mask.assign(pairs.size(), 0);
  int n = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (reprojection_error(m, pairs[i]) < threshold) {
      mask[i] = 1;
      ++n;
    }
  }
  return n;
}

// Truncated quadratic cost: inliers by residual, outliers at the threshold.
double msac_cost(const Eigen::Matrix3d& m, std::span<const PointPair> pairs, double threshold) {
  double c = 0;
  for (const auto& p : pairs) c += std::min(std::pow(reprojection_error(m, p), 2), threshold * threshold);
  return c;
}

// Levenberg-Marquardt on the forward reprojection error, h22 fixed to 1.
Eigen::Matrix3d refine_geometric(const Eigen::Matrix3d& start, std::span<const PointPair> pairs) {
  using Vec8 = Eigen::Matrix<double, 8, 1>;
  using Mat8 = Eigen::Matrix<double, 8, 8>;
  auto to_vec = [](const Eigen::Matrix3d& m) {
    Vec8 v;
    v << m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1);
    return v;
  };
  auto to_mat = [](const Vec8& v) {
    Eigen::Matrix3d m;
    m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), 1.0;
    return m;
  };

  std::vector<Point2> q, r;
  for (const auto& p : pairs) {
    q.push_back(p.query);
    r.push_back(p.reference);
  }
  const Normalizer nq = make_normalizer(q);
  const Normalizer nr = make_normalizer(r);
  std::vector<PointPair> np;
  np.reserve(pairs.size());
  for (const auto& p : pairs) np.push_back({transform(nq.t, p.query), transform(nr.t, p.reference)});

  Eigen::Matrix3d hn = nr.t * start * nq.t.inverse();
  hn /= hn(2, 2);

  auto cost = [&](const Eigen::Matrix3d& m) {
    double c = 0;
    for (const auto& p : np) {
      const Point2 t = transform(m, p.query);
      c += (t.x - p.reference.x) * (t.x - p.reference.x) + (t.y - p.reference.y) * (t.y - p.reference.y);
    }
    return c;
  };

  Vec8 v = to_vec(hn);
  double current = cost(hn);
  double lambda = 1e-3;
  for (int iter = 0; iter < 50; ++iter) {
    Mat8 jtj = Mat8::Zero();
    Vec8 jte = Vec8::Zero();
    const Eigen::Matrix3d m = to_mat(v);
    for (const auto& p : np) {
      const double x = p.query.x, y = p.query.y;
      const double w = m(2, 0) * x + m(2, 1) * y + 1.0;
      const double px = (m(0, 0) * x + m(0, 1) * y + m(0, 2)) / w;
      const double py = (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / w;
      Vec8 jx, jy;
      jx << x / w, y / w, 1 / w, 0, 0, 0, -px * x / w, -px * y / w;
      jy << 0, 0, 0, x / w, y / w, 1 / w, -py * x / w, -py * y / w;
      const double ex = px - p.reference.x, ey = py - p.reference.y;
      jtj += jx * jx.transpose() + jy * jy.transpose();
      jte += jx * ex + jy * ey;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 10 && !improved; ++attempt) {
      Mat8 damped = jtj;
      damped.diagonal() *= (1.0 + lambda);
      const Vec8 step = damped.ldlt().solve(-jte);
      const Vec8 cand = v + step;
      const double c = cost(to_mat(cand));
      if (std::isfinite(c) && c < current) {
        const double gain = current - c;
        v = cand;
        current = c;
        lambda = std::max(lambda / 10, 1e-12);
        improved = true;
        if (gain < 1e-14 * std::max(1.0, current)) iter = 50;
      } else {
        lambda *= 10;
      }
    }
    if (!improved) break;
  }
  Eigen::Matrix3d out = nr.t.inverse() * to_mat(v) * nq.t;
  return out / out(2, 2);
}

cv::Mat gray8(const Raster& img) { return to_mat(to_gray(img)); }

}  // namespace

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite() || std::abs(m(2, 2)) < 1e-12) {
    throw DegenerateConfigurationError("homography with vanishing h22");
  }
  h_ = m / m(2, 2);
  if (std::abs(h_.determinant()) <= 1e-12) throw DegenerateConfigurationError("singular homography");
}

Point2 Homography::apply(Point2 p) const { return transform(h_, p); }

// OpenCV's SIFT builds its base level by upsampling 2x with pixel-centre
// resampling but reports coordinates as doubled-grid / 2, which puts every
// keypoint a quarter pixel down-right of where it belongs.
constexpr double kSiftOffset = 0.25;

std::vector<PointPair> detect_and_match(const Raster& query, const Raster& reference, double ratio) {
  if (query.height() < 64 || query.width() < 64 || reference.height() < 64 || reference.width() < 64) {
    throw ArgumentError("registration needs images of at least 64x64");
  }
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("ratio must lie in (0, 1)");

  auto sift = cv::SIFT::create();
  std::vector<cv::KeyPoint> kq, kr;
  cv::Mat dq, dr;
  sift->detectAndCompute(gray8(query), cv::noArray(), kq, dq);
  sift->detectAndCompute(gray8(reference), cv::noArray(), kr, dr);
  if (kq.size() < 2 || kr.size() < 2) {
    throw InsufficientFeaturesError("too few keypoints (" + std::to_string(kq.size()) + " query, " +
                                    std::to_string(kr.size()) + " reference)");
  }

  cv::BFMatcher matcher(cv::NORM_L2);
  std::vector<std::vector<cv::DMatch>> knn;
  matcher.knnMatch(dq, dr, knn, 2);

  std::vector<cv::DMatch> good;
  for (const auto& m : knn) {
    if (m.size() == 2 && m[0].distance < ratio * m[1].distance) good.push_back(m[0]);
  }
  std::stable_sort(good.begin(), good.end(),
                   [](const cv::DMatch& a, const cv::DMatch& b) { return a.distance < b.distance; });

  std::vector<PointPair> pairs;
  pairs.reserve(good.size());
  for (const auto& m : good) {
    const auto& a = kq[static_cast<std::size_t>(m.queryIdx)].pt;
    const auto& b = kr[static_cast<std::size_t>(m.trainIdx)].pt;
    pairs.push_back({{a.x - kSiftOffset, a.y - kSiftOffset}, {b.x - kSiftOffset, b.y - kSiftOffset}});
  }
  if (pairs.size() < kMinimalSet) {
    throw InsufficientFeaturesError("only " + std::to_string(pairs.size()) + " matches pass the ratio test");
  }
  return pairs;
}

Homography fit_homography_dlt(std::span<const PointPair> pairs) {
  if (pairs.size() < kMinimalSet) throw ArgumentError("DLT needs at least 4 pairs");
  Eigen::Matrix3d m;
  if (!solve_dlt(pairs, m)) throw DegenerateConfigurationError("degenerate point configuration");
  return Homography(m);
}

HomographyEstimate estimate_homography(std::span<const PointPair> pairs, double reproj_threshold,
                                       int max_iters, std::uint64_t seed) {
  if (pairs.size() < kMinimalSet) throw ArgumentError("need at least 4 point pairs");
  if (reproj_threshold <= 0 || max_iters <= 0) throw ArgumentError("threshold and iterations must be positive");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Eigen::Matrix3d best = Eigen::Matrix3d::Identity();
  int best_count = -1;
  std::vector<std::uint8_t> mask, best_mask;
  int evaluated = 0;
  int needed = max_iters;

  for (int it = 0; it < std::min(max_iters, needed); ++it) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
      std::swap(order[k], order[pick(rng)]);
      idx[k] = order[k];
    }
    if (degenerate_sample(pairs, idx)) continue;
    std::array<PointPair, 4> sample{pairs[idx[0]], pairs[idx[1]], pairs[idx[2]], pairs[idx[3]]};
    Eigen::Matrix3d h;
    if (!solve_dlt(sample, h)) continue;
    ++evaluated;
    const int n = count_inliers(h, pairs, reproj_threshold, mask);
    if (n > best_count) {
      best_count = n;
      best = h;
      best_mask = mask;
      // Adaptive stop at 99.9% confidence of having drawn one clean sample.
      const double w = static_cast<double>(n) / static_cast<double>(pairs.size());
      const double p_fail = 1.0 - std::pow(w, 4);
      if (p_fail <= 0.0) {
        needed = it + 1;
      } else if (p_fail < 1.0) {
        needed = static_cast<int>(std::ceil(std::log(1e-3) / std::log(p_fail)));
        needed = std::max(needed, it + 1);
      }
    }
  }
  if (evaluated == 0) {
    throw DegenerateConfigurationError("every sampled minimal set was collinear or rank-deficient");
  }
  const double ratio = static_cast<double>(best_count) / static_cast<double>(pairs.size());
  if (ratio < kMinConsensusRatio) {
    throw NoConsensusError("best inlier ratio " + std::to_string(ratio) + " below 0.2");
  }

  // Least-squares refit on the consensus set until it stops changing. A refit
  // is kept when it lowers the truncated cost, even if the count dips.
  double best_cost = msac_cost(best, pairs, reproj_threshold);
  for (int round = 0; round < 10; ++round) {
    std::vector<PointPair> in;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (best_mask[i]) in.push_back(pairs[i]);
    }
    if (in.size() < kMinimalSet) break;
    Eigen::Matrix3d refit;
    if (!solve_dlt(in, refit)) break;
    if (in.size() > kMinimalSet) refit = refine_geometric(refit, in);
    const double cost = msac_cost(refit, pairs, reproj_threshold);
    if (!(cost < best_cost)) break;
    const int n = count_inliers(refit, pairs, reproj_threshold, mask);
    const bool same = mask == best_mask;
    best_cost = cost;
    best = refit;
    best_count = n;
    best_mask = mask;
    if (same) break;
  }

  HomographyEstimate out;
  out.homography = Homography(best);
  out.inliers = best_mask;
  out.inlier_count = best_count;
  out.inlier_ratio = static_cast<double>(best_count) / static_cast<double>(pairs.size());
  double err = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (best_mask[i]) err += reprojection_error(out.homography.matrix(), pairs[i]);
  }
  out.mean_reprojection_error = best_count > 0 ? err / best_count : 0.0;
  return out;
}

Raster warp_perspective(const Raster& img, const Homography& query_to_frame, int out_h, int out_w) {
  cv::Mat src(img.height(), img.width(), img.channels() == 3 ? CV_32FC3 : CV_32FC1,
               const_cast<float*>(img.pixels().data()));
  cv::Mat m(3, 3, CV_64F);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m.at<double>(r, c) = query_to_frame.matrix()(r, c);
  }
  cv::Mat dst;
  cv::warpPerspective(src, dst, m, cv::Size(out_w, out_h), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                      cv::Scalar::all(0));
  std::vector<float> px(static_cast<std::size_t>(out_h) * out_w * img.channels());
  const auto* data = dst.ptr<float>(0);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(data[i], 0.0f, 1.0f);
  return Raster(out_h, out_w, img.color_space(), std::move(px));
}

RegistrationResult register_image(const Raster& query, const Raster& reference, const RegistrationConfig& config) {
  const auto pairs = detect_and_match(query, reference, config.ratio);
  const auto est = estimate_homography(pairs, config.reproj_threshold, config.max_iters, config.seed);
  if (est.mean_reprojection_error > config.max_mean_reprojection_error) {
    throw RegistrationQualityError("mean reprojection error " + std::to_string(est.mean_reprojection_error) +
                                   " px exceeds " + std::to_string(config.max_mean_reprojection_error));
  }
  RegistrationResult out;
  out.warped = warp_perspective(query, est.homography, reference.height(), reference.width());
  out.homography = est.homography;
  out.inlier_count = est.inlier_count;
  out.inlier_ratio = est.inlier_ratio;
  out.mean_reprojection_error = est.mean_reprojection_error;
  return out;
}

}  // namespace pcb_sentinel
