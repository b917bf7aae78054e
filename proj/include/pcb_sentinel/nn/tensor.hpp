#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "pcb_sentinel/imaging.hpp"

namespace pcb_sentinel::nn {

// Fixed 64-byte alignment keeps vectorized reductions bit-reproducible:
// Eigen peels a different head for every alignment it sees.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// Batch x channels x height x width. Dense layers use h = w = 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW float tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> sample(int n) { return {data_.data() + n * shape_.sample_size(), shape_.sample_size()}; }
  std::span<const float> sample(int n) const {
    return {data_.data() + n * shape_.sample_size(), shape_.sample_size()};
  }

  float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  /// Same data, different shape of equal size.
  Tensor reshaped(Shape shape) const;
  void fill(float v);
  Tensor& operator+=(const Tensor& other);

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_;
  FloatBuffer data_;
};

/// Packs rasters of identical size into an N x C x H x W tensor.
Tensor from_rasters(std::span<const Raster> images);
Tensor from_raster(const Raster& image);
/// Sample n as a raster; values are clamped into [0, 1].
Raster to_raster(const Tensor& t, int n = 0);

}  // namespace pcb_sentinel::nn
