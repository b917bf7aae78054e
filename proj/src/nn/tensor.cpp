#include "pcb_sentinel/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel::nn {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.size()) throw ShapeError("buffer does not match tensor shape " + shape_.str());
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor t;
  t.shape_ = shape;
  t.data_ = data_;
  return t;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeMismatchError(shape_.str() + " vs " + other.shape_.str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor from_rasters(std::span<const Raster> images) {
  if (images.empty()) throw ShapeError("no images to pack");
  const auto& first = images.front();
  Shape s{static_cast<int>(images.size()), first.channels(), first.height(), first.width()};
  Tensor t(s);
  for (int n = 0; n < s.n; ++n) {
    const auto& img = images[static_cast<std::size_t>(n)];
    if (img.height() != s.h || img.width() != s.w || img.channels() != s.c) {
      throw ShapeError("images in a batch must share dimensions");
    }
    auto px = img.pixels();
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        for (int c = 0; c < s.c; ++c) t.at(n, c, y, x) = px[(static_cast<std::size_t>(y) * s.w + x) * s.c + c];
      }
    }
  }
  return t;
}

Tensor from_raster(const Raster& image) { return from_rasters(std::span<const Raster>(&image, 1)); }

Raster to_raster(const Tensor& t, int n) {
  const Shape& s = t.shape();
  if (s.c != 1 && s.c != 3) throw ShapeError("raster needs 1 or 3 channels, got " + s.str());
  Raster out(s.h, s.w, s.c == 3 ? ColorSpace::Rgb : ColorSpace::Gray);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < s.c; ++c) out.at(y, x, c) = std::clamp(t.at(n, c, y, x), 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace pcb_sentinel::nn
