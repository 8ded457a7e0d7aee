#pragma once

#include "ranpool/nn/params.hpp"

namespace ranpool::nn {

/// Adam with bias correction; moment buffers mirror the parameter layout.
class Adam {
 public:
  explicit Adam(const ModelParams& like, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  /// params -= lr * m_hat / (sqrt(v_hat) + eps)
  void step(ModelParams& params, const ModelParams& grads, double lr);
  long steps() const { return t_; }

 private:
  ModelParams m_;
  ModelParams v_;
  double beta1_;
  double beta2_;
  double epsilon_;
  long t_ = 0;
};

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
void clip_global_norm(ModelParams& grads, double max_norm);

}  // namespace ranpool::nn
