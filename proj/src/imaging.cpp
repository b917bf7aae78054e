#include "pcb_sentinel/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

namespace {

void check_dims(int height, int width) {
  if (height <= 0 || width <= 0) {
    throw ArgumentError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                        std::to_string(width));
  }
}

// Bilinear sampling on interleaved data. Source coordinates use half-pixel
// centres and clamp at the border.
void bilinear(std::span<const float> src, int h, int w, int c, std::span<float> dst, int out_h,
              int out_w) {
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<float> fx(out_w);
  for (int j = 0; j < out_w; ++j) {
    double x = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
    x0[j] = static_cast<int>(std::floor(x));
    x1[j] = std::min(x0[j] + 1, w - 1);
    fx[j] = static_cast<float>(x - x0[j]);
  }
  for (int i = 0; i < out_h; ++i) {
    double y = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, h - 1);
    const float fy = static_cast<float>(y - y0);
    const float* r0 = src.data() + static_cast<std::size_t>(y0) * w * c;
    const float* r1 = src.data() + static_cast<std::size_t>(y1) * w * c;
    float* out = dst.data() + static_cast<std::size_t>(i) * out_w * c;
    for (int j = 0; j < out_w; ++j) {
      for (int k = 0; k < c; ++k) {
        const float a = r0[x0[j] * c + k], b = r0[x1[j] * c + k];
        const float d = r1[x0[j] * c + k], e = r1[x1[j] * c + k];
        const float top = a + fx[j] * (b - a);
        const float bottom = d + fx[j] * (e - d);
        const float v = top + fy * (bottom - top);
        const float lo = std::min(std::min(a, b), std::min(d, e));
        const float hi = std::max(std::max(a, b), std::max(d, e));
        out[j * c + k] = std::clamp(v, lo, hi);
      }
    }
  }
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

// --- Raster -------------------------------------------------------------------

Raster::Raster(int height, int width, ColorSpace color_space, float fill)
    : height_(height), width_(width), color_space_(color_space) {
  check_dims(height, width);
  if (!(fill >= 0.0f && fill <= 1.0f)) throw ArgumentError("fill value outside [0, 1]");
  pixels_.assign(static_cast<std::size_t>(height) * width * channels(), fill);
}

Raster::Raster(int height, int width, ColorSpace color_space, std::vector<float> pixels)
    : height_(height), width_(width), color_space_(color_space), pixels_(std::move(pixels)) {
  check_dims(height, width);
  if (pixels_.size() != static_cast<std::size_t>(height) * width * channels()) {
    throw ArgumentError("pixel buffer size does not match " + std::to_string(height) + "x" +
                        std::to_string(width) + "x" + std::to_string(channels()));
  }
  for (float v : pixels_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("pixel value outside [0, 1]");
  }
}

// --- BinaryMask -----------------------------------------------------------------

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  check_dims(height, width);
  if (fill > 1) throw ArgumentError("mask fill must be 0 or 1");
  values_.assign(static_cast<std::size_t>(height) * width, fill);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  check_dims(height, width);
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw ArgumentError("mask buffer size mismatch");
  }
  for (auto v : values_) {
    if (v > 1) throw ArgumentError("mask values must be 0 or 1");
  }
}

std::size_t BinaryMask::popcount() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

// --- FloatMap -------------------------------------------------------------------

FloatMap::FloatMap(int height, int width, float fill) : height_(height), width_(width) {
  check_dims(height, width);
  if (!std::isfinite(fill)) throw ArgumentError("non-finite fill value");
  values_.assign(static_cast<std::size_t>(height) * width, fill);
}

FloatMap::FloatMap(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  check_dims(height, width);
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw ArgumentError("map buffer size mismatch");
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw ArgumentError("non-finite value in float map");
  }
}

float FloatMap::min() const { return *std::min_element(values_.begin(), values_.end()); }
float FloatMap::max() const { return *std::max_element(values_.begin(), values_.end()); }

// --- I/O ------------------------------------------------------------------------

namespace {

Raster decoded_to_raster(cv::Mat m, const std::string& what) {
  if (m.depth() != CV_8U) throw FormatError("unsupported bit depth in " + what + " (only 8-bit is accepted)");
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() != 1 && m.channels() != 3) throw FormatError("unsupported channel count in " + what);
  return from_mat(m);
}

}  // namespace

Raster load_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IOError("no such file: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IOError("cannot decode image: " + path.string());
  return decoded_to_raster(std::move(m), path.string());
}

Raster decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw FormatError("empty image payload");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw FormatError("payload is not a decodable PNG or JPEG image");
  return decoded_to_raster(std::move(m), "uploaded image");
}

std::vector<std::uint8_t> encode_png(const Raster& img) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat(img), out)) throw IOError("PNG encoding failed");
  return out;
}

void save_raster(const std::filesystem::path& path, const Raster& img) {
  if (!cv::imwrite(path.string(), to_mat(img))) throw IOError("cannot write " + path.string());
}

BinaryMask load_mask(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IOError("no such file: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IOError("cannot decode mask: " + path.string());
  std::vector<std::uint8_t> values(static_cast<std::size_t>(m.rows) * m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) values[static_cast<std::size_t>(y) * m.cols + x] = row[x] >= 128;
  }
  return BinaryMask(m.rows, m.cols, std::move(values));
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
  }
  if (!cv::imwrite(path.string(), m)) throw IOError("cannot write " + path.string());
}

std::vector<std::uint8_t> encode_float_map(const FloatMap& map) {
  std::vector<std::uint8_t> out(16 + map.values().size() * 4);
  std::memcpy(out.data(), "AMAP", 4);
  put_u32(out.data() + 4, static_cast<std::uint32_t>(map.height()));
  put_u32(out.data() + 8, static_cast<std::uint32_t>(map.width()));
  put_u32(out.data() + 12, 0);
  for (std::size_t i = 0; i < map.values().size(); ++i) {
    put_u32(out.data() + 16 + 4 * i, std::bit_cast<std::uint32_t>(map.values()[i]));
  }
  return out;
}

FloatMap decode_float_map(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "AMAP", 4) != 0) {
    throw FormatError("not an AMAP float map");
  }
  const auto h = get_u32(bytes.data() + 4);
  const auto w = get_u32(bytes.data() + 8);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 16 + 4 * n) throw FormatError("AMAP payload size mismatch");
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
  }
  return FloatMap(static_cast<int>(h), static_cast<int>(w), std::move(values));
}

void write_float_map(const std::filesystem::path& path, const FloatMap& map) {
  const auto bytes = encode_float_map(map);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FloatMap read_float_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_float_map(bytes);
}

// --- conversions ----------------------------------------------------------------

Raster from_mat(const cv::Mat& m) {
  if (m.depth() != CV_8U || (m.channels() != 1 && m.channels() != 3)) {
    throw FormatError("expected 8-bit gray or BGR matrix");
  }
  const bool rgb = m.channels() == 3;
  Raster out(m.rows, m.cols, rgb ? ColorSpace::Rgb : ColorSpace::Gray);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (rgb) {
        out.at(y, x, 0) = row[3 * x + 2] / 255.0f;
        out.at(y, x, 1) = row[3 * x + 1] / 255.0f;
        out.at(y, x, 2) = row[3 * x + 0] / 255.0f;
      } else {
        out.at(y, x) = row[x] / 255.0f;
      }
    }
  }
  return out;
}

cv::Mat to_mat(const Raster& img) {
  const bool rgb = img.channels() == 3;
  cv::Mat m(img.height(), img.width(), rgb ? CV_8UC3 : CV_8UC1);
  auto q = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      if (rgb) {
        row[3 * x + 0] = q(img.at(y, x, 2));
        row[3 * x + 1] = q(img.at(y, x, 1));
        row[3 * x + 2] = q(img.at(y, x, 0));
      } else {
        row[x] = q(img.at(y, x));
      }
    }
  }
  return m;
}

Raster to_gray(const Raster& img) {
  if (img.color_space() == ColorSpace::Gray) return img;
  Raster out(img.height(), img.width(), ColorSpace::Gray);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float v = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
      out.at(y, x) = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return out;
}

Raster to_rgb(const Raster& img) {
  if (img.color_space() == ColorSpace::Rgb) return img;
  Raster out(img.height(), img.width(), ColorSpace::Rgb);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x);
    }
  }
  return out;
}

// --- resampling -------------------------------------------------------------------

Raster resize_bilinear(const Raster& img, int out_h, int out_w) {
  check_dims(out_h, out_w);
  if (out_h == img.height() && out_w == img.width()) return img;
  Raster out(out_h, out_w, img.color_space());
  bilinear(img.pixels(), img.height(), img.width(), img.channels(), out.pixels(), out_h, out_w);
  return out;
}

FloatMap resize_bilinear(const FloatMap& map, int out_h, int out_w) {
  check_dims(out_h, out_w);
  if (out_h == map.height() && out_w == map.width()) return map;
  FloatMap out(out_h, out_w);
  bilinear(map.values(), map.height(), map.width(), 1, out.values(), out_h, out_w);
  return out;
}

ValueRange global_range(std::span<const FloatMap> maps) {
  if (maps.empty()) throw ArgumentError("empty map set");
  ValueRange r{maps.front().min(), maps.front().max()};
  for (const auto& m : maps) {
    r.min = std::min(r.min, m.min());
    r.max = std::max(r.max, m.max());
  }
  return r;
}

std::vector<FloatMap> minmax_normalize(std::span<const FloatMap> maps) {
  const ValueRange r = global_range(maps);
  if (!(r.max > r.min)) {
    throw DegenerateRangeError("all values equal " + std::to_string(r.min) + " across the set");
  }
  std::vector<FloatMap> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back(normalize_with(m, r, true));
  return out;
}

FloatMap normalize_with(const FloatMap& map, ValueRange range, bool clamp) {
  if (!(range.max > range.min)) throw DegenerateRangeError("normalization range is empty");
  FloatMap out(map.height(), map.width());
  const double span = static_cast<double>(range.max) - range.min;
  auto src = map.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto v = static_cast<float>((static_cast<double>(src[i]) - range.min) / span);
    dst[i] = clamp ? std::clamp(v, 0.0f, 1.0f) : v;
  }
  return out;
}

BinaryMask binarize(const FloatMap& map, float threshold) {
  std::vector<std::uint8_t> v(map.values().size());
  auto src = map.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = src[i] >= threshold ? 1 : 0;
  return BinaryMask(map.height(), map.width(), std::move(v));
}

BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w) {
  check_dims(out_h, out_w);
  BinaryMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(static_cast<int>((static_cast<long long>(y) * mask.height()) / out_h), mask.height() - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(static_cast<int>((static_cast<long long>(x) * mask.width()) / out_w), mask.width() - 1);
      out.set(y, x, mask.at(sy, sx) != 0);
    }
  }
  return out;
}

}  // namespace pcb_sentinel
