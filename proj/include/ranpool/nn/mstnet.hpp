#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "ranpool/data.hpp"
#include "ranpool/nn/layers.hpp"
#include "ranpool/nn/params.hpp"

namespace ranpool::nn {

/// Mean absolute error between equal-length series.
template <typename DerivedP, typename DerivedT>
typename DerivedP::Scalar mae_loss(const Eigen::DenseBase<DerivedP>& pred,
                                   const Eigen::DenseBase<DerivedT>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("mae_loss: length mismatch");
  if (pred.size() == 0) throw ShapeError("mae_loss: empty series");
  return (pred.derived().array() - truth.derived().array()).abs().mean();
}

struct MstNetConfig {
  int q = 7;
  int features = data::kFeatureCount;
  int conv_channels = 8;
  int kernel_size = 2;
  int tcn_layers = 2;  // layer i uses dilation 2^i
  int trunk_hidden = 16;
  std::vector<int> branch_lstm{16, 8};
  int traffic_hidden = 16;
  int users_hidden = 8;
  double dropout = 0.2;
  double learning_rate = 0.001;
  int batch_size = 32;
  int epochs = 100;
  // Alternate traffic-only and user-only updates per batch instead of a summed loss.
  bool alternating = false;

  void validate() const;
  int dilation(int layer) const { return 1 << layer; }
};

MstNetConfig mstnet_config_from_json(const std::string& json_text);
std::string to_json(const MstNetConfig& c);

/// Per-feature standardization fitted on training windows.
struct Standardizer {
  Eigen::Array3d mean = Eigen::Array3d::Zero();
  Eigen::Array3d scale = Eigen::Array3d::Ones();

  static Standardizer fit(const std::vector<const data::SequenceSample*>& samples);
  static Standardizer fit(const std::vector<data::SequenceSample>& samples);
};

struct Batch {
  Sequence inputs;          // q matrices of batch x features
  Eigen::VectorXd traffic;  // standardized targets
  Eigen::VectorXd users;
};

Batch make_batch(const std::vector<data::SequenceSample>& samples,
                 const std::vector<std::size_t>& indices, const Standardizer& standardizer);
Batch make_batch(const std::vector<data::SequenceSample>& samples,
                 const Standardizer& standardizer);

/// Shared TCN-LSTM trunk with residual links and two single-step heads.
class MstNet {
 public:
  struct TcnCache {
    Sequence input;
    Sequence conv;  // pre-normalization conv output
    LayerNorm::Cache norm;
    Sequence normed;
    Sequence skip;  // residual path (projected when channels differ)
  };

  struct BranchCache {
    std::vector<Sequence> lstm_inputs;
    std::vector<Lstm::Cache> lstm;
    Eigen::MatrixXd last;
    Eigen::MatrixXd hidden_pre;
    Eigen::MatrixXd hidden;
  };

  struct Cache {
    std::vector<TcnCache> tcn;
    Sequence tcn_out;
    DropoutMask dropout;
    Sequence trunk_in;
    Lstm::Cache trunk_lstm;
    Sequence trunk_out;
    BranchCache traffic;
    BranchCache users;
  };

  struct Output {
    Eigen::VectorXd traffic;
    Eigen::VectorXd users;
  };

  /// Registers all layers in a fresh parameter store.
  MstNet(const MstNetConfig& config, ModelParams& params, std::uint64_t init_seed);

  const MstNetConfig& config() const { return config_; }

  /// Dropout is applied iff `dropout_rng` is non-null and the rate is positive.
  Output forward(const ModelParams& p, const Sequence& x, Cache& cache,
                 Rng* dropout_rng = nullptr) const;
  Output forward(const ModelParams& p, const Sequence& x) const;

  /// Gradients given dL/d(traffic) and dL/d(users) per batch row.
  ModelParams backward(const ModelParams& p, const Cache& cache, const Eigen::VectorXd& d_traffic,
                       const Eigen::VectorXd& d_users) const;
  /// Same, with dL/d(x) for every input timestep.
  ModelParams backward(const ModelParams& p, const Cache& cache, const Eigen::VectorXd& d_traffic,
                       const Eigen::VectorXd& d_users, Sequence* d_input) const;

 private:
  struct TcnLayer {
    CausalConv1d conv;
    LayerNorm norm;
    bool projected = false;
    Dense projection;
  };
  struct Branch {
    std::vector<Lstm> lstm;
    Dense hidden;
    Dense output;
    std::string name;
  };

  Eigen::MatrixXd forward_branch(const ModelParams& p, const Branch& b, const Sequence& trunk,
                                 BranchCache& cache) const;
  Sequence backward_branch(const ModelParams& p, const Branch& b, const BranchCache& cache,
                           const Eigen::MatrixXd& dy, std::size_t steps, ModelParams& grads) const;

  MstNetConfig config_;
  std::vector<TcnLayer> tcn_;
  Lstm trunk_;
  bool trunk_projected_ = false;
  Dense trunk_projection_;
  Branch traffic_;
  Branch users_;
};

/// Fresh network and parameters for `config`.
struct Model {
  MstNetConfig config;
  ModelParams params;
  MstNet net;

  Model(const MstNetConfig& c, std::uint64_t init_seed);
};

struct EpochResult {
  ModelParams params;
  double loss = 0.0;  // sample-weighted mean of the optimized loss
};

/// Loss above which training is aborted as divergent.
constexpr double kDivergenceLimit = 1e6;

/// One shuffled pass of mini-batch SGD on l_traffic + l_users.
EpochResult train_epoch(const MstNet& net, ModelParams params,
                        const std::vector<data::SequenceSample>& train,
                        const Standardizer& standardizer, Rng& rng);

/// (MAE_traffic + MAE_users) / 2 in standardized units, dropout off.
double validation_loss(const MstNet& net, const ModelParams& params,
                       const std::vector<data::SequenceSample>& samples,
                       const Standardizer& standardizer);

struct Predictions {
  Eigen::VectorXd traffic;  // GB
  Eigen::VectorXd users;
};

Predictions predict(const MstNet& net, const ModelParams& params,
                    const std::vector<data::SequenceSample>& samples,
                    const Standardizer& standardizer);

struct TestMae {
  double traffic_gb = 0.0;
  double users = 0.0;
};

TestMae test_mae(const MstNet& net, const ModelParams& params,
                 const std::vector<data::SequenceSample>& samples,
                 const Standardizer& standardizer);

}  // namespace ranpool::nn
