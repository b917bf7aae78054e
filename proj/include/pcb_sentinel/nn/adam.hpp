#pragma once

#include <vector>

#include "pcb_sentinel/nn/layers.hpp"

namespace pcb_sentinel::nn {

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-7f;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig config = {});

  /// One update with learning rate `lr` from the accumulated gradients.
  void step(float lr);
  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Param*> params_;
  AdamConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

}  // namespace pcb_sentinel::nn
