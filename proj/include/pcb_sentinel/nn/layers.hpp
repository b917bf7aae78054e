#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pcb_sentinel/nn/tensor.hpp"

namespace pcb_sentinel::nn {

/// Trainable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Whatever a layer needs to keep from its training-mode forward pass.
struct Saved {
  Tensor input;
  Tensor output;
  std::vector<float> aux;
  std::vector<std::int32_t> index;
};

/// A differentiable layer.
///
/// Inference (`forward`) is const and thread-safe. Training splits backprop
/// into an input-gradient part, which is const so a frozen network can pass
/// gradients through without being touched, and a parameter-gradient part.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const Tensor& x) const = 0;
  /// Training-mode forward; may update running statistics.
  virtual Tensor forward_train(const Tensor& x, Saved& saved) { return forward_frozen(x, saved); }
  /// Inference-mode forward that still records what backward_input needs.
  virtual Tensor forward_frozen(const Tensor& x, Saved& saved) const;
  virtual Tensor backward_input(const Tensor& dy, const Saved& saved) const = 0;
  virtual void accumulate_grads(const Tensor& /*dy*/, const Saved& /*saved*/) {}

  virtual std::vector<Param*> params() { return {}; }
  /// Non-trainable state that still has to be serialized (running stats).
  virtual std::vector<Tensor*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<const Param*> param_view() const;
  std::vector<const Tensor*> buffer_view() const;
};

/// Square-kernel convolution, zero padding `pad` on every side.
class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  void accumulate_grads(const Tensor& dy, const Saved& saved) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  Param& weight() { return weight_; }  // [out, in * k * k]
  Param& bias() { return bias_; }

 private:
  int in_, out_, k_, stride_, pad_;
  Param weight_;
  Param bias_;
};

/// Transposed convolution; output = (in - 1) * stride - 2 * pad + kernel + output_pad.
class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad, int output_pad);

  std::string kind() const override { return "conv_transpose2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  void accumulate_grads(const Tensor& dy, const Saved& saved) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

  Param& weight() { return weight_; }  // [in, out * k * k]
  Param& bias() { return bias_; }

 private:
  int in_, out_, k_, stride_, pad_, output_pad_;
  Param weight_;
  Param bias_;
};

/// Fully connected layer over the flattened C*H*W features; emits N x out x 1 x 1.
class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features);

  std::string kind() const override { return "linear"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  void accumulate_grads(const Tensor& dy, const Saved& saved) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  Param& weight() { return weight_; }  // [out, in]
  Param& bias() { return bias_; }

 private:
  int in_, out_;
  Param weight_;
  Param bias_;
};

/// Per-channel batch normalization. Running statistics follow
/// running = momentum * running + (1 - momentum) * batch.
class BatchNorm final : public Layer {
 public:
  BatchNorm(int channels, float momentum, float epsilon);

  std::string kind() const override { return "batch_norm"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Saved& saved) override;
  Tensor forward_frozen(const Tensor& x, Saved& saved) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  void accumulate_grads(const Tensor& dy, const Saved& saved) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  int channels_;
  float momentum_, epsilon_;
  Param gamma_;
  Param beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

class LeakyReLU final : public Layer {
 public:
  explicit LeakyReLU(float slope) : slope_(slope) {}
  std::string kind() const override { return "leaky_relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyReLU>(*this); }

 private:
  float slope_;
};

class ReLU final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

/// Logistic output, kept strictly inside (0, 1).
class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_frozen(const Tensor& x, Saved& saved) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
class MaxPool2x2 final : public Layer {
 public:
  std::string kind() const override { return "max_pool"; }
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, in.h / 2, in.w / 2}; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_frozen(const Tensor& x, Saved& saved) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2x2>(*this); }
};

/// Reinterprets each sample as C x H x W.
class Reshape final : public Layer {
 public:
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  std::string kind() const override { return "reshape"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward_input(const Tensor& dy, const Saved& saved) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

 private:
  int c_, h_, w_;
};

// --- initialization ------------------------------------------------------------

void he_uniform(Tensor& t, int fan_in, std::mt19937_64& rng);
void glorot_uniform(Tensor& t, int fan_in, int fan_out, std::mt19937_64& rng);

// --- im2col helpers (exposed for tests) -------------------------------------------

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
};

/// cols[(c * k + ki) * k + kj][oy * out_w + ox] = x[c][oy * s - p + ki][ox * s - p + kj]
void im2col(std::span<const float> x, const ConvGeometry& g, std::span<float> cols);
/// Adjoint of im2col: scatters-and-adds columns back into x.
void col2im(std::span<const float> cols, const ConvGeometry& g, std::span<float> x);

}  // namespace pcb_sentinel::nn
