#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pcb_sentinel/nn/layers.hpp"

namespace pcb_sentinel::nn {

/// Per-layer saved state from one training-mode forward pass.
struct Tape {
  std::size_t begin = 0;
  std::vector<Saved> saved;
};

/// Ordered layer stack. Copying deep-copies every layer.
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer, std::string name);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  /// Inference over layers [begin, end).
  Tensor forward(const Tensor& x, std::size_t begin = 0, std::size_t end = SIZE_MAX) const;
  /// Training-mode forward over [begin, end), filling `tape`.
  Tensor forward_train(const Tensor& x, Tape& tape, std::size_t begin = 0, std::size_t end = SIZE_MAX);
  /// Inference-mode forward that records a tape (frozen networks).
  Tensor forward_frozen(const Tensor& x, Tape& tape, std::size_t begin = 0, std::size_t end = SIZE_MAX) const;
  /// Input gradient only; parameters are left untouched.
  Tensor backward_input(const Tensor& dy, const Tape& tape) const;
  /// Backprop through the taped range; accumulates parameter gradients and
  /// returns the gradient with respect to the range's input.
  Tensor backward(const Tensor& dy, const Tape& tape);

  Shape output_shape(const Shape& in, std::size_t begin = 0, std::size_t end = SIZE_MAX) const;

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Every parameter and buffer in a fixed order, named "<layer>.<tensor>".
  std::vector<std::pair<std::string, const Tensor*>> state() const;
  std::vector<std::pair<std::string, Tensor*>> mutable_state();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::string> names_;
};

/// Binary weight archive ("PCBW" v1, little-endian):
///   magic[4] | u32 version | u32 count | count x { u32 name_len | name | i32 n,c,h,w | f32[] }
void save_state(const std::filesystem::path& path, const Sequential& net);
/// Loads into an already-built network; names and shapes must match exactly.
void load_state(const std::filesystem::path& path, Sequential& net);

}  // namespace pcb_sentinel::nn
