#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace pcb_sentinel {

enum class ColorSpace { Rgb, Gray };

/// H x W x C image with interleaved float pixels in [0, 1].
///
/// Float-in-[0,1] is the only pixel convention inside the library; 8-bit
/// conversion happens in load_raster/save_raster and the cv::Mat bridges.
class Raster {
 public:
  Raster() = default;
  Raster(int height, int width, ColorSpace color_space, float fill = 0.0f);
  /// Takes ownership of interleaved pixels; throws ArgumentError when the
  /// size does not match or a value lies outside [0, 1].
  Raster(int height, int width, ColorSpace color_space, std::vector<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return color_space_ == ColorSpace::Rgb ? 3 : 1; }
  ColorSpace color_space() const { return color_space_; }
  bool empty() const { return pixels_.empty(); }

  float at(int y, int x, int c = 0) const { return pixels_[index(y, x, c)]; }
  float& at(int y, int x, int c = 0) { return pixels_[index(y, x, c)]; }

  std::span<const float> pixels() const { return pixels_; }
  std::span<float> pixels() { return pixels_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels() + c;
  }

  int height_ = 0;
  int width_ = 0;
  ColorSpace color_space_ = ColorSpace::Rgb;
  std::vector<float> pixels_;
};

/// H x W mask with values in {0, 1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0);
  BinaryMask(int height, int width, std::vector<std::uint8_t> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool on) { values_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }
  std::span<const std::uint8_t> values() const { return values_; }

  std::size_t popcount() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> values_;
};

/// Single-channel float field (anomaly maps). Values must be finite.
class FloatMap {
 public:
  FloatMap() = default;
  FloatMap(int height, int width, float fill = 0.0f);
  FloatMap(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  float at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  float min() const;
  float max() const;

  friend bool operator==(const FloatMap&, const FloatMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

struct ValueRange {
  float min = 0.0f;
  float max = 0.0f;
  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

// --- I/O -------------------------------------------------------------------

/// Decodes an 8-bit PNG/JPEG. Gray images stay single channel, colour
/// images come back as RGB; alpha is dropped.
Raster load_raster(const std::filesystem::path& path);
void save_raster(const std::filesystem::path& path, const Raster& img);
/// In-memory PNG/JPEG decode with the same conventions as load_raster.
Raster decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Raster& img);

/// Loads an 8-bit mask and binarizes at 128.
BinaryMask load_mask(const std::filesystem::path& path);
/// Writes {0, 255} 8-bit PNG.
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);

/// "AMAP" container: 16-byte little-endian header (magic, u32 height,
/// u32 width, u32 reserved) followed by row-major f32 values.
std::vector<std::uint8_t> encode_float_map(const FloatMap& map);
FloatMap decode_float_map(std::span<const std::uint8_t> bytes);
void write_float_map(const std::filesystem::path& path, const FloatMap& map);
FloatMap read_float_map(const std::filesystem::path& path);

// --- conversions -----------------------------------------------------------

Raster from_mat(const cv::Mat& bgr_or_gray_8u);
cv::Mat to_mat(const Raster& img);  // CV_8UC3 (BGR) or CV_8UC1
Raster to_gray(const Raster& img);  // luma 0.299 R + 0.587 G + 0.114 B
Raster to_rgb(const Raster& img);

// --- resampling and normalization --------------------------------------------

/// Bilinear resampling with half-pixel centres (align_corners = false):
/// output pixel (i, j) samples source ((i + 0.5) * H / out_h - 0.5, ...),
/// with coordinates clamped to the border.
Raster resize_bilinear(const Raster& img, int out_h, int out_w);
FloatMap resize_bilinear(const FloatMap& map, int out_h, int out_w);

/// Joint min/max over every value of every map.
ValueRange global_range(std::span<const FloatMap> maps);

/// Maps every value through (v - min) / (max - min) using one range shared
/// by the whole set. Throws DegenerateRangeError when max == min.
std::vector<FloatMap> minmax_normalize(std::span<const FloatMap> maps);

/// Normalizes one map against a stored range; results outside [0, 1] are
/// clamped when `clamp` is set.
FloatMap normalize_with(const FloatMap& map, ValueRange range, bool clamp = true);

/// mask(y, x) = map(y, x) >= threshold
BinaryMask binarize(const FloatMap& map, float threshold);

/// Nearest-neighbour resize, keeps masks binary.
BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w);

}  // namespace pcb_sentinel
