#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

#include "ranpool/clustering.hpp"
#include "ranpool/data.hpp"
#include "ranpool/nn/mstnet.hpp"

namespace ranpool::ccl {

/// One logical cluster's data and training state.
struct ClusterModel {
  int id = 0;
  std::string name;
  std::size_t stations = 0;  // |L|, used for merge weights
  Eigen::VectorXd profile;   // 24-hour traffic profile, drives partner selection
  data::DatasetSplit split;
  nn::ModelParams params;
  int epoch = 0;
  double v = 0.0;
  double v_prev = 0.0;
  int evaluations = 0;  // validation losses recorded so far
  std::vector<int> collab;
};

enum class PartnerMode { kNone, kAll, kNegative, kThreshold };

PartnerMode parse_partner_mode(const std::string& s);
std::string to_string(PartnerMode m);

struct CollabPolicy {
  PartnerMode mode = PartnerMode::kThreshold;
  double psi = 0.95;
  double omega = 0.30;
  nn::ParamScope scope = nn::ParamScope::kSharedBlock;
  int max_epochs = 0;              // 0 uses the network config's epoch count
  double negative_cutoff = -0.2;

  void validate() const;
};

/// Partner lists per cluster under `policy`, from a cluster PCC matrix.
std::vector<std::vector<int>> select_partners(const Eigen::MatrixXd& corr,
                                              const CollabPolicy& policy);

/// Readiness to exchange: relative validation-loss change within omega, or
/// past half of the epoch budget. A zero previous loss counts as converged.
bool collab_ready(const ClusterModel& model, double omega, int max_epochs);

/// Owner-weighted average over partners in scope:
/// W' = (W + sum_i a_i W_i) / (|C| + 1) with a_i = |L_i| / |L|.
nn::ModelParams collab_merge(const ClusterModel& owner,
                             const std::vector<const ClusterModel*>& partners,
                             nn::ParamScope scope);

/// Same formula on raw parameter sets and sizes.
nn::ModelParams merge_params(const nn::ModelParams& owner, std::size_t owner_size,
                             const std::vector<std::pair<const nn::ModelParams*, std::size_t>>& partners,
                             nn::ParamScope scope);

/// One exchange round: snapshot all params, then every cluster in `order` with
/// `eligible[i]` merges from the snapshots of its collaboration set.
void collab_round(std::vector<ClusterModel>& clusters, const std::vector<bool>& eligible,
                  const std::vector<int>& order, nn::ParamScope scope);

struct RegimeConfig {
  nn::MstNetConfig net;
  CollabPolicy policy;
  int fl_round = 5;        // FL averaging period in epochs
  int pfl_finetune = 5;    // PFL local epochs after FL
  bool fl_size_weighted = false;
  std::vector<int> ciil_order;  // empty = ascending cluster order

  int epochs() const { return policy.max_epochs > 0 ? policy.max_epochs : net.epochs; }
};

RegimeConfig regime_config_from_json(const std::string& json_text);
std::string to_json(const RegimeConfig& c);

struct MaeRow {
  std::string regime;
  int cluster_id = 0;
  std::string cluster;
  int q = 0;
  double mae_traffic_gb = 0.0;
  double mae_users = 0.0;
};

struct CurvePoint {
  std::string regime;
  int cluster_id = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct RegimeResult {
  std::string regime;
  std::vector<nn::ModelParams> params;  // final parameters per cluster
  std::vector<MaeRow> mae;
  std::vector<CurvePoint> curves;
  nn::Standardizer standardizer;
  int exchange_rounds = 0;
};

/// Standardizer over the union of all clusters' training windows.
nn::Standardizer shared_standardizer(const std::vector<ClusterModel>& clusters);

/// Fresh initial parameters shared by every cluster under `seed`.
nn::ModelParams initial_params(const nn::MstNetConfig& config, std::uint64_t seed);

/// Logical clusters of a clustering report as training units.
std::vector<ClusterModel> make_clusters(const std::vector<data::BaseStation>& stations,
                                        const clustering::ClusteringReport& report, int q,
                                        std::uint64_t seed);

RegimeResult run_ccl(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                     std::uint64_t seed);
RegimeResult run_idel(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                      std::uint64_t seed);
RegimeResult run_gl(const std::vector<ClusterModel>& clusters, const RegimeConfig& config,
                    std::uint64_t seed);
RegimeResult run_fl(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                    std::uint64_t seed);
RegimeResult run_pfl(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                     std::uint64_t seed);
RegimeResult run_ciil(const std::vector<ClusterModel>& clusters, const RegimeConfig& config,
                      std::uint64_t seed);

/// Dispatch by name: ccl, idel, gl, fl, pfl, ciil.
RegimeResult run_regime(const std::string& regime, const std::vector<ClusterModel>& clusters,
                        const RegimeConfig& config, std::uint64_t seed);

/// Per-cluster test MAE of `params` (one set per cluster).
std::vector<MaeRow> evaluate(const std::string& regime, const std::vector<ClusterModel>& clusters,
                             const std::vector<nn::ModelParams>& params,
                             const nn::MstNetConfig& net, const nn::Standardizer& standardizer);

std::string mae_csv(const std::vector<MaeRow>& rows);
std::string curves_csv(const std::vector<CurvePoint>& rows);

/// Worker count from RANPOOL_THREADS (default: hardware concurrency, at least 1).
int worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. The first
/// exception (lowest index) is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ranpool::ccl
