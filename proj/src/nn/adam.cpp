#include "ranpool/nn/adam.hpp"

#include <cmath>

namespace ranpool::nn {

Adam::Adam(const ModelParams& like, double beta1, double beta2, double epsilon)
    : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::step(ModelParams& params, const ModelParams& grads, double lr) {
  params.require_congruent(grads, "Adam::step");
  params.require_congruent(m_, "Adam::step");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i].array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

void clip_global_norm(ModelParams& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm && norm > 0.0) grads.scale(max_norm / norm);
}

}  // namespace ranpool::nn
