#include "pcb_sentinel/nn/adam.hpp"

#include <cmath>

namespace pcb_sentinel::nn {

Adam::Adam(std::vector<Param*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Param* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step(float lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(t_));
  const float b1 = config_.beta1, b2 = config_.beta2;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto value = params_[k]->value.data();
    auto grad = params_[k]->grad.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config_.epsilon));
    }
  }
}

}  // namespace pcb_sentinel::nn
