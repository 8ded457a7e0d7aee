#pragma once

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

#include "ranpool/nn/params.hpp"

namespace ranpool::nn {

/// Time-major sequence: one (batch x channels) matrix per timestep.
using Sequence = std::vector<Eigen::MatrixXd>;

/// Throws NumericalError naming `layer` if `x` holds NaN or Inf.
void check_finite(const Eigen::MatrixXd& x, std::string_view layer);
void check_finite(const Sequence& x, std::string_view layer);

Sequence zeros_like(const Sequence& x);

/// y = x W^T + b
struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool has_bias = true;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  static Dense create(ModelParams& params, const std::string& name, Partition partition,
                      Eigen::Index in, Eigen::Index out, Rng& rng, bool has_bias = true);

  Eigen::MatrixXd forward(const ModelParams& p, const Eigen::MatrixXd& x) const;
  /// Accumulates into `grads` and returns dL/dx.
  Eigen::MatrixXd backward(const ModelParams& p, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& dy, ModelParams& grads) const;

  Sequence forward(const ModelParams& p, const Sequence& x) const;
  Sequence backward(const ModelParams& p, const Sequence& x, const Sequence& dy,
                    ModelParams& grads) const;
};

/// Dilated causal 1-D convolution: y_t = b + sum_k W_k x_{t - k*dilation}.
/// Taps reaching before t = 0 read zeros.
struct CausalConv1d {
  std::size_t weight = 0;  // out x (kernel * in), tap k in columns [k*in, (k+1)*in)
  std::size_t bias = 0;
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  int kernel = 2;
  int dilation = 1;

  static CausalConv1d create(ModelParams& params, const std::string& name, Partition partition,
                             Eigen::Index in, Eigen::Index out, int kernel, int dilation,
                             Rng& rng);

  Sequence forward(const ModelParams& p, const Sequence& x) const;
  Sequence backward(const ModelParams& p, const Sequence& x, const Sequence& dy,
                    ModelParams& grads) const;
};

/// Normalization over the channel axis of each row.
struct LayerNorm {
  std::size_t gain = 0;
  std::size_t shift = 0;
  Eigen::Index channels = 0;
  double epsilon = 1e-5;

  struct Cache {
    Sequence normalized;
    std::vector<Eigen::VectorXd> inv_std;
  };

  static LayerNorm create(ModelParams& params, const std::string& name, Partition partition,
                          Eigen::Index channels);

  Sequence forward(const ModelParams& p, const Sequence& x, Cache& cache) const;
  Sequence backward(const ModelParams& p, const Cache& cache, const Sequence& dy,
                    ModelParams& grads) const;
};

Sequence relu(const Sequence& x);
Eigen::MatrixXd relu(const Eigen::MatrixXd& x);
Sequence relu_backward(const Sequence& x, const Sequence& dy);
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);

/// Inverted dropout. An empty mask means the layer is inactive.
struct DropoutMask {
  Sequence mask;
  bool active() const { return !mask.empty(); }
};

DropoutMask make_dropout_mask(const Sequence& shape_like, double rate, Rng& rng);
Sequence apply_mask(const DropoutMask& mask, const Sequence& x);

/// LSTM with gate order (input, forget, cell, output).
struct Lstm {
  std::size_t w_input = 0;      // 4H x I
  std::size_t w_recurrent = 0;  // 4H x H
  std::size_t bias = 0;         // 1 x 4H
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;

  struct State {
    Eigen::MatrixXd h;  // batch x H
    Eigen::MatrixXd c;
  };

  struct StepCache {
    Eigen::MatrixXd i, f, g, o, c, tanh_c;
  };

  struct Cache {
    std::vector<StepCache> steps;
    State initial;
  };

  static Lstm create(ModelParams& params, const std::string& name, Partition partition,
                     Eigen::Index in, Eigen::Index hidden, Rng& rng);

  State zero_state(Eigen::Index batch) const;

  State step(const ModelParams& p, const Eigen::MatrixXd& x, const State& prev,
             StepCache* cache = nullptr) const;

  /// Hidden state at every timestep.
  Sequence forward(const ModelParams& p, const Sequence& x, Cache& cache) const;
  /// `dh` is dL/dh_t for every t (zeros where the output is unused).
  Sequence backward(const ModelParams& p, const Sequence& x, const Cache& cache,
                    const Sequence& dh, ModelParams& grads) const;
};

}  // namespace ranpool::nn
