#include "pcb_sentinel/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat as_matrix(std::span<float> s, int rows, int cols) { return MapMat(s.data(), rows, cols); }
ConstMapMat as_matrix(std::span<const float> s, int rows, int cols) { return ConstMapMat(s.data(), rows, cols); }

Param make_param(const std::string& name, Shape shape) { return Param{name, Tensor(shape), Tensor(shape)}; }

void require_channels(const Shape& in, int channels, const char* who) {
  if (in.c != channels) {
    throw ShapeError(std::string(who) + " expects " + std::to_string(channels) + " channels, got " + in.str());
  }
}

}  // namespace

// --- Layer ------------------------------------------------------------------------

Tensor Layer::forward_frozen(const Tensor& x, Saved& saved) const {
  saved.input = x;
  return forward(x);
}

std::vector<const Param*> Layer::param_view() const {
  auto ps = const_cast<Layer*>(this)->params();
  return {ps.begin(), ps.end()};
}

std::vector<const Tensor*> Layer::buffer_view() const {
  auto bs = const_cast<Layer*>(this)->buffers();
  return {bs.begin(), bs.end()};
}

// --- im2col -------------------------------------------------------------------------

void im2col(std::span<const float> x, const ConvGeometry& g, std::span<float> cols) {
  const int hw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = x.data() + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        float* row = cols.data() + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          float* out = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(out, out + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            out[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(std::span<const float> cols, const ConvGeometry& g, std::span<float> x) {
  const int hw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    float* plane = x.data() + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const float* row = cols.data() + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const float* in = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

// --- initialization -------------------------------------------------------------------

void he_uniform(Tensor& t, int fan_in, std::mt19937_64& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> d(-limit, limit);
  for (float& v : t.data()) v = d(rng);
}

void glorot_uniform(Tensor& t, int fan_in, int fan_out, std::mt19937_64& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> d(-limit, limit);
  for (float& v : t.data()) v = d(rng);
}

// --- Conv2d -------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad),
      weight_(make_param("weight", {out_channels, in_channels * kernel * kernel, 1, 1})),
      bias_(make_param("bias", {out_channels, 1, 1, 1})) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
    throw ArgumentError("invalid convolution hyperparameters");
  }
}

Shape Conv2d::output_shape(const Shape& in) const {
  require_channels(in, in_, "conv2d");
  const int oh = (in.h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (in.w + 2 * pad_ - k_) / stride_ + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d input " + in.str() + " too small");
  return {in.n, out_, oh, ow};
}

Tensor Conv2d::forward(const Tensor& x) const {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  const ConvGeometry g{in_, in.h, in.w, k_, stride_, pad_, os.h, os.w};
  const int ckk = in_ * k_ * k_;
  const int hw = os.h * os.w;
  Tensor y(os);
  FloatBuffer cols(static_cast<std::size_t>(ckk) * hw);
  const auto w = as_matrix(weight_.value.data(), out_, ckk);
  const auto b = Eigen::Map<const Eigen::VectorXf>(bias_.value.data().data(), out_);
  for (int n = 0; n < in.n; ++n) {
    im2col(x.sample(n), g, cols);
    auto out = as_matrix(y.sample(n), out_, hw);
    out.noalias() = w * as_matrix(std::span<const float>(cols), ckk, hw);
    out.colwise() += b;
  }
  return y;
}

Tensor Conv2d::backward_input(const Tensor& dy, const Saved& saved) const {
  const Shape in = saved.input.shape();
  const Shape os = dy.shape();
  const ConvGeometry g{in_, in.h, in.w, k_, stride_, pad_, os.h, os.w};
  const int ckk = in_ * k_ * k_;
  const int hw = os.h * os.w;
  Tensor dx(in);
  FloatBuffer cols(static_cast<std::size_t>(ckk) * hw);
  const auto w = as_matrix(weight_.value.data(), out_, ckk);
  for (int n = 0; n < in.n; ++n) {
    as_matrix(std::span<float>(cols), ckk, hw).noalias() = w.transpose() * as_matrix(dy.sample(n), out_, hw);
    col2im(cols, g, dx.sample(n));
  }
  return dx;
}

void Conv2d::accumulate_grads(const Tensor& dy, const Saved& saved) {
  const Shape in = saved.input.shape();
  const Shape os = dy.shape();
  const ConvGeometry g{in_, in.h, in.w, k_, stride_, pad_, os.h, os.w};
  const int ckk = in_ * k_ * k_;
  const int hw = os.h * os.w;
  FloatBuffer cols(static_cast<std::size_t>(ckk) * hw);
  auto dw = as_matrix(weight_.grad.data(), out_, ckk);
  auto db = Eigen::Map<Eigen::VectorXf>(bias_.grad.data().data(), out_);
  for (int n = 0; n < in.n; ++n) {
    im2col(saved.input.sample(n), g, cols);
    const auto g_out = as_matrix(dy.sample(n), out_, hw);
    dw.noalias() += g_out * as_matrix(std::span<const float>(cols), ckk, hw).transpose();
    db += g_out.rowwise().sum();
  }
}

// --- ConvTranspose2d ----------------------------------------------------------------
//
// Implemented as the adjoint of a convolution whose input is this layer's
// output: forward = col2im(W^T x), input gradient = W im2col(dy).

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                                 int output_pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad), output_pad_(output_pad),
      weight_(make_param("weight", {in_channels, out_channels * kernel * kernel, 1, 1})),
      bias_(make_param("bias", {out_channels, 1, 1, 1})) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || pad < 0 || output_pad < 0 ||
      output_pad >= stride) {
    throw ArgumentError("invalid transposed convolution hyperparameters");
  }
}

Shape ConvTranspose2d::output_shape(const Shape& in) const {
  require_channels(in, in_, "conv_transpose2d");
  const int oh = (in.h - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
  const int ow = (in.w - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d input " + in.str() + " too small");
  return {in.n, out_, oh, ow};
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  const ConvGeometry g{out_, os.h, os.w, k_, stride_, pad_, in.h, in.w};
  const int okk = out_ * k_ * k_;
  const int hw = in.h * in.w;
  Tensor y(os);
  FloatBuffer cols(static_cast<std::size_t>(okk) * hw);
  const auto w = as_matrix(weight_.value.data(), in_, okk);
  for (int n = 0; n < in.n; ++n) {
    as_matrix(std::span<float>(cols), okk, hw).noalias() = w.transpose() * as_matrix(x.sample(n), in_, hw);
    auto out = y.sample(n);
    col2im(cols, g, out);
    for (int c = 0; c < out_; ++c) {
      const float b = bias_.value.data()[static_cast<std::size_t>(c)];
      float* plane = out.data() + static_cast<std::size_t>(c) * os.h * os.w;
      for (int i = 0; i < os.h * os.w; ++i) plane[i] += b;
    }
  }
  return y;
}

Tensor ConvTranspose2d::backward_input(const Tensor& dy, const Saved& saved) const {
  const Shape in = saved.input.shape();
  const Shape os = dy.shape();
  const ConvGeometry g{out_, os.h, os.w, k_, stride_, pad_, in.h, in.w};
  const int okk = out_ * k_ * k_;
  const int hw = in.h * in.w;
  Tensor dx(in);
  FloatBuffer cols(static_cast<std::size_t>(okk) * hw);
  const auto w = as_matrix(weight_.value.data(), in_, okk);
  for (int n = 0; n < in.n; ++n) {
    im2col(dy.sample(n), g, cols);
    as_matrix(dx.sample(n), in_, hw).noalias() = w * as_matrix(std::span<const float>(cols), okk, hw);
  }
  return dx;
}

void ConvTranspose2d::accumulate_grads(const Tensor& dy, const Saved& saved) {
  const Shape in = saved.input.shape();
  const Shape os = dy.shape();
  const ConvGeometry g{out_, os.h, os.w, k_, stride_, pad_, in.h, in.w};
  const int okk = out_ * k_ * k_;
  const int hw = in.h * in.w;
  FloatBuffer cols(static_cast<std::size_t>(okk) * hw);
  auto dw = as_matrix(weight_.grad.data(), in_, okk);
  for (int n = 0; n < in.n; ++n) {
    im2col(dy.sample(n), g, cols);
    dw.noalias() += as_matrix(saved.input.sample(n), in_, hw) * as_matrix(std::span<const float>(cols), okk, hw).transpose();
    const auto plane = dy.sample(n);
    for (int c = 0; c < out_; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < os.plane(); ++i) s += plane[c * os.plane() + i];
      bias_.grad.data()[static_cast<std::size_t>(c)] += static_cast<float>(s);
    }
  }
}

// --- Linear ---------------------------------------------------------------------------

Linear::Linear(int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_(make_param("weight", {out_features, in_features, 1, 1})),
      bias_(make_param("bias", {out_features, 1, 1, 1})) {
  if (in_features <= 0 || out_features <= 0) throw ArgumentError("invalid linear layer size");
}

Shape Linear::output_shape(const Shape& in) const {
  if (static_cast<int>(in.sample_size()) != in_) {
    throw ShapeError("linear expects " + std::to_string(in_) + " features, got " + in.str());
  }
  return {in.n, out_, 1, 1};
}

Tensor Linear::forward(const Tensor& x) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  auto out = as_matrix(y.data(), os.n, out_);
  out.noalias() = as_matrix(x.data(), os.n, in_) * as_matrix(weight_.value.data(), out_, in_).transpose();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data().data(), out_);
  return y;
}

Tensor Linear::backward_input(const Tensor& dy, const Saved& saved) const {
  Tensor dx(saved.input.shape());
  as_matrix(dx.data(), dy.shape().n, in_).noalias() =
      as_matrix(dy.data(), dy.shape().n, out_) * as_matrix(weight_.value.data(), out_, in_);
  return dx;
}

void Linear::accumulate_grads(const Tensor& dy, const Saved& saved) {
  const int n = dy.shape().n;
  const auto g = as_matrix(dy.data(), n, out_);
  as_matrix(weight_.grad.data(), out_, in_).noalias() += g.transpose() * as_matrix(saved.input.data(), n, in_);
  Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data().data(), out_) += g.colwise().sum();
}

// --- BatchNorm ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int channels, float momentum, float epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon),
      gamma_(make_param("gamma", {channels, 1, 1, 1})), beta_(make_param("beta", {channels, 1, 1, 1})),
      running_mean_(Shape{channels, 1, 1, 1}, 0.0f), running_var_(Shape{channels, 1, 1, 1}, 1.0f) {
  gamma_.value.fill(1.0f);
}

Tensor BatchNorm::forward(const Tensor& x) const {
  const Shape s = x.shape();
  require_channels(s, channels_, "batch_norm");
  Tensor y(s);
  for (int c = 0; c < channels_; ++c) {
    const float inv = 1.0f / std::sqrt(running_var_.data()[c] + epsilon_);
    const float scale = gamma_.value.data()[c] * inv;
    const float shift = beta_.value.data()[c] - running_mean_.data()[c] * scale;
    for (int n = 0; n < s.n; ++n) {
      const float* src = x.sample(n).data() + c * s.plane();
      float* dst = y.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm::forward_train(const Tensor& x, Saved& saved) {
  const Shape s = x.shape();
  require_channels(s, channels_, "batch_norm");
  const double m = static_cast<double>(s.n) * s.plane();
  saved.input = x;
  saved.aux.assign(2 * static_cast<std::size_t>(channels_), 0.0f);
  Tensor y(s);
  for (int c = 0; c < channels_; ++c) {
    double sum = 0, sq = 0;
    for (int n = 0; n < s.n; ++n) {
      const float* src = x.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) sum += src[i];
    }
    const double mean = sum / m;
    for (int n = 0; n < s.n; ++n) {
      const float* src = x.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (src[i] - mean) * (src[i] - mean);
    }
    const double var = sq / m;
    const auto inv = static_cast<float>(1.0 / std::sqrt(var + epsilon_));
    saved.aux[2 * c] = static_cast<float>(mean);
    saved.aux[2 * c + 1] = inv;
    const float gamma = gamma_.value.data()[c], beta = beta_.value.data()[c];
    for (int n = 0; n < s.n; ++n) {
      const float* src = x.sample(n).data() + c * s.plane();
      float* dst = y.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = gamma * (src[i] - static_cast<float>(mean)) * inv + beta;
    }
    running_mean_.data()[c] = momentum_ * running_mean_.data()[c] + (1 - momentum_) * static_cast<float>(mean);
    running_var_.data()[c] = momentum_ * running_var_.data()[c] + (1 - momentum_) * static_cast<float>(var);
  }
  return y;
}

Tensor BatchNorm::forward_frozen(const Tensor& x, Saved& saved) const {
  saved.input = Tensor(x.shape());
  saved.index = {1};  // running statistics: backward is a plain per-channel scale
  return forward(x);
}

Tensor BatchNorm::backward_input(const Tensor& dy, const Saved& saved) const {
  const Shape s = saved.input.shape();
  if (!saved.index.empty()) {
    Tensor dx = dy;
    for (int c = 0; c < channels_; ++c) {
      const float scale = gamma_.value.data()[c] / std::sqrt(running_var_.data()[c] + epsilon_);
      for (int n = 0; n < s.n; ++n) {
        float* d = dx.sample(n).data() + c * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) d[i] *= scale;
      }
    }
    return dx;
  }
  const double m = static_cast<double>(s.n) * s.plane();
  Tensor dx(s);
  for (int c = 0; c < channels_; ++c) {
    const float mean = saved.aux[2 * c], inv = saved.aux[2 * c + 1];
    const float gamma = gamma_.value.data()[c];
    double sum_g = 0, sum_gx = 0;
    for (int n = 0; n < s.n; ++n) {
      const float* x = saved.input.sample(n).data() + c * s.plane();
      const float* g = dy.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sum_g += g[i];
        sum_gx += g[i] * (x[i] - mean) * inv;
      }
    }
    const auto mean_g = static_cast<float>(sum_g / m);
    const auto mean_gx = static_cast<float>(sum_gx / m);
    for (int n = 0; n < s.n; ++n) {
      const float* x = saved.input.sample(n).data() + c * s.plane();
      const float* g = dy.sample(n).data() + c * s.plane();
      float* d = dx.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const float xhat = (x[i] - mean) * inv;
        d[i] = gamma * inv * (g[i] - mean_g - xhat * mean_gx);
      }
    }
  }
  return dx;
}

void BatchNorm::accumulate_grads(const Tensor& dy, const Saved& saved) {
  const Shape s = saved.input.shape();
  if (!saved.index.empty()) return;  // frozen pass
  for (int c = 0; c < channels_; ++c) {
    const float mean = saved.aux[2 * c], inv = saved.aux[2 * c + 1];
    double dg = 0, db = 0;
    for (int n = 0; n < s.n; ++n) {
      const float* x = saved.input.sample(n).data() + c * s.plane();
      const float* g = dy.sample(n).data() + c * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        dg += g[i] * (x[i] - mean) * inv;
        db += g[i];
      }
    }
    gamma_.grad.data()[c] += static_cast<float>(dg);
    beta_.grad.data()[c] += static_cast<float>(db);
  }
}

// --- activations ------------------------------------------------------------------------

Tensor LeakyReLU::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.data()) v = v > 0 ? v : slope_ * v;
  return y;
}

Tensor LeakyReLU::backward_input(const Tensor& dy, const Saved& saved) const {
  Tensor dx = dy;
  auto in = saved.input.data();
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0 ? d[i] : slope_ * d[i];
  return dx;
}

Tensor ReLU::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.data()) v = v > 0 ? v : 0.0f;
  return y;
}

Tensor ReLU::backward_input(const Tensor& dy, const Saved& saved) const {
  Tensor dx = dy;
  auto in = saved.input.data();
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0 ? d[i] : 0.0f;
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) const {
  Tensor y = x;
  constexpr float lo = 1e-7f, hi = 1.0f - 1e-7f;
  for (float& v : y.data()) v = std::clamp(1.0f / (1.0f + std::exp(-v)), lo, hi);
  return y;
}

Tensor Sigmoid::forward_frozen(const Tensor& x, Saved& saved) const {
  saved.output = forward(x);
  return saved.output;
}

Tensor Sigmoid::backward_input(const Tensor& dy, const Saved& saved) const {
  Tensor dx = dy;
  auto y = saved.output.data();
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i] * (1.0f - y[i]);
  return dx;
}

// --- pooling / reshape -----------------------------------------------------------------------

namespace {

Tensor max_pool(const Tensor& x, std::vector<std::int32_t>* argmax) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  if (os.h == 0 || os.w == 0) throw ShapeError("max_pool input " + s.str() + " too small");
  Tensor y(os);
  if (argmax) argmax->assign(os.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < os.h; ++i) {
        for (int j = 0; j < os.w; ++j, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          int where = 0;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const float v = x.at(n, c, 2 * i + di, 2 * j + dj);
              if (v > best) {
                best = v;
                where = (2 * i + di) * s.w + (2 * j + dj);
              }
            }
          }
          y.data()[o] = best;
          if (argmax) (*argmax)[o] = where;
        }
      }
    }
  }
  return y;
}

}  // namespace

Tensor MaxPool2x2::forward(const Tensor& x) const { return max_pool(x, nullptr); }

Tensor MaxPool2x2::forward_frozen(const Tensor& x, Saved& saved) const {
  saved.input = Tensor(x.shape());  // only the shape is needed
  return max_pool(x, &saved.index);
}

Tensor MaxPool2x2::backward_input(const Tensor& dy, const Saved& saved) const {
  const Shape s = saved.input.shape();
  Tensor dx(s);
  const Shape os = dy.shape();
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      float* plane = dx.sample(n).data() + c * s.plane();
      for (std::size_t k = 0; k < os.plane(); ++k, ++o) plane[saved.index[o]] += dy.data()[o];
    }
  }
  return dx;
}

Shape Reshape::output_shape(const Shape& in) const {
  if (in.sample_size() != static_cast<std::size_t>(c_) * h_ * w_) {
    throw ShapeError("cannot reshape " + in.str() + " to " + std::to_string(c_) + "x" + std::to_string(h_) + "x" +
                     std::to_string(w_));
  }
  return {in.n, c_, h_, w_};
}

Tensor Reshape::forward(const Tensor& x) const { return x.reshaped(output_shape(x.shape())); }

Tensor Reshape::backward_input(const Tensor& dy, const Saved& saved) const {
  return dy.reshaped(saved.input.shape());
}

}  // namespace pcb_sentinel::nn
