#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/imgproc.hpp>

#include "pcb_sentinel/nn/layers.hpp"
#include "pcb_sentinel/nn/sequential.hpp"
#include "pcb_sentinel/perceptual.hpp"

namespace testing_support {

using namespace pcb_sentinel;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("pcb_sentinel_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Raster random_raster(int h, int w, std::uint64_t seed, ColorSpace cs = ColorSpace::Rgb) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Raster r(h, w, cs);
  for (auto& v : r.pixels()) v = u(rng);
  return r;
}

inline nn::Tensor random_tensor(nn::Shape s, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  nn::Tensor t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Multi-scale blurred noise: plenty of corners and blobs for SIFT.
inline Raster textured_image(int side, std::uint64_t seed) {
  cv::RNG rng(seed);
  cv::Mat acc = cv::Mat::zeros(side, side, CV_32FC1);
  for (int scale : {1, 3, 7}) {
    cv::Mat n(side, side, CV_32FC1);
    rng.fill(n, cv::RNG::UNIFORM, 0.0, 1.0);
    cv::GaussianBlur(n, n, cv::Size(0, 0), scale);
    cv::normalize(n, n, 0.0, 1.0, cv::NORM_MINMAX);
    acc += n / 3.0f;
  }
  cv::normalize(acc, acc, 0.0, 1.0, cv::NORM_MINMAX);
  std::vector<float> px(acc.begin<float>(), acc.end<float>());
  for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
  return Raster(side, side, ColorSpace::Gray, std::move(px));
}

// Well-conditioned perspective transform about the image centre: rotation
// up to 10 degrees, scale 0.9-1.1, shift up to 10 px, mild perspective.
inline Eigen::Matrix3d random_homography(int side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a = u(rng) * 10.0 * 3.14159265358979 / 180.0, s = 1.0 + 0.1 * u(rng);
  const double c = side / 2.0;
  Eigen::Matrix3d t1, r, t2, p;
  t1 << 1, 0, -c, 0, 1, -c, 0, 0, 1;
  r << s * std::cos(a), -s * std::sin(a), 10 * u(rng), s * std::sin(a), s * std::cos(a), 10 * u(rng), 0, 0, 1;
  t2 << 1, 0, c, 0, 1, c, 0, 0, 1;
  p << 1, 0, 0, 0, 1, 0, 2e-5 * u(rng), 2e-5 * u(rng), 1;
  return p * t2 * r * t1;
}

// Small smooth extractor: three conv + sigmoid taps, the second strided.
struct StubSpec {
  int in = 3, c1 = 4, c2 = 5, c3 = 3;
};

inline const std::vector<float>& stub_mean() {
  static const std::vector<float> m{0.5f, 0.4f, 0.3f};
  return m;
}
inline const std::vector<float>& stub_std() {
  static const std::vector<float> s{0.2f, 0.25f, 0.3f};
  return s;
}

inline FeatureExtractor stub_extractor(std::vector<int> loss_layers = {1, 3}, int anomaly_layer = 2,
                                       std::uint64_t seed = 11) {
  const StubSpec s;
  nn::Sequential net;
  net.add(std::make_unique<nn::Conv2d>(s.in, s.c1, 3, 1, 1), "c1");
  net.add(std::make_unique<nn::Sigmoid>(), "a1");
  net.add(std::make_unique<nn::Conv2d>(s.c1, s.c2, 3, 2, 1), "c2");
  net.add(std::make_unique<nn::Sigmoid>(), "a2");
  net.add(std::make_unique<nn::Conv2d>(s.c2, s.c3, 3, 1, 1), "c3");
  net.add(std::make_unique<nn::Sigmoid>(), "a3");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.6f, 0.6f);
  for (auto* p : net.params()) {
    for (auto& v : p->value.data()) v = u(rng);
  }
  return FeatureExtractor(std::move(net), {2, 4, 6}, stub_mean(), stub_std(), std::move(loss_layers),
                          anomaly_layer, "stub", false);
}

// Independent loop-based forward pass of the stub in double precision.
// Returns the activations of taps 1..3 for one sample (C x H x W, flattened).
struct NaiveFeatures {
  std::vector<std::vector<double>> taps;
  std::vector<int> c, h, w;
};

inline NaiveFeatures naive_stub_forward(const FeatureExtractor& fx, const nn::Tensor& x, int n) {
  const auto& net = fx.net();
  NaiveFeatures out;
  const int H = x.shape().h, W = x.shape().w;
  std::vector<double> cur(static_cast<std::size_t>(3) * H * W);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        cur[(c * H + y) * W + xx] = (x.at(n, c, y, xx) - stub_mean()[c]) / stub_std()[c];
      }
    }
  }
  int cin = 3, h = H, w = W;
  const int strides[3] = {1, 2, 1};
  for (int layer = 0; layer < 3; ++layer) {
    const auto params = net.layer(static_cast<std::size_t>(2 * layer)).param_view();
    const auto& wt = params[0]->value;  // [cout, cin * 9]
    const auto& bias = params[1]->value;
    const int cout = wt.shape().n;
    const int st = strides[layer];
    const int oh = (h + 2 - 3) / st + 1, ow = (w + 2 - 3) / st + 1;
    std::vector<double> next(static_cast<std::size_t>(cout) * oh * ow);
    for (int o = 0; o < cout; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.data()[o];
          for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < 3; ++ki) {
              for (int kj = 0; kj < 3; ++kj) {
                const int iy = oy * st - 1 + ki, ix = ox * st - 1 + kj;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(wt.data()[o * cin * 9 + (c * 3 + ki) * 3 + kj]) * cur[(c * h + iy) * w + ix];
              }
            }
          }
          next[(o * oh + oy) * ow + ox] = 1.0 / (1.0 + std::exp(-acc));
        }
      }
    }
    cur = next;
    cin = cout;
    h = oh;
    w = ow;
    out.taps.push_back(cur);
    out.c.push_back(cout);
    out.h.push_back(oh);
    out.w.push_back(ow);
  }
  return out;
}

}  // namespace testing_support
