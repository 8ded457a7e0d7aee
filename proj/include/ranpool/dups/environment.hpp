#pragma once

#include <Eigen/Core>

#include <vector>

#include "ranpool/data.hpp"

namespace ranpool::dups {

/// Fiber propagation delay per km of straight-line distance.
constexpr double kMicrosecondsPerKm = 5.0;
constexpr double kLatencyBoundUs = 50.0;
/// Consumption of an ON server as a fraction of full power: idle share plus load share.
constexpr double kIdleFraction = 0.7;
constexpr double kLoadFraction = 0.3;

/// Per-agent on/off decisions, 1 = ON.
using JointAction = Eigen::VectorXi;

double fh_latency(const data::Coordinate& a, const data::Coordinate& b);

/// Static pooling scenario: sites, predicted traffic per hour, reward weights.
struct Scenario {
  std::vector<data::Coordinate> sites;
  std::vector<StationId> ids;  // station id per site, for reports
  Eigen::MatrixXd traffic;     // hours x n, predicted GB per hour
  Eigen::MatrixXd users;       // hours x n
  double capacity_gb = 192.0;
  double latency_bound_us = kLatencyBoundUs;
  double alpha = 0.8;
  double beta = 0.5;

  Eigen::Index n() const { return static_cast<Eigen::Index>(sites.size()); }
  Eigen::Index hours() const { return traffic.rows(); }
  /// Normalizer for user counts in observations (max over the trace, at least 1).
  double users_scale() const;
  void validate() const;
};

/// Traffic of one OFF site carried by another DU.
struct Flow {
  Eigen::Index from = 0;
  Eigen::Index to = 0;
  double gb = 0.0;
  double latency_us = 0.0;
};

struct Redirection {
  Eigen::VectorXd load;            // hosted GB per DU; 0 for OFF DUs
  std::vector<Eigen::Index> host;  // serving DU per site, -1 if rejected or idle
  std::vector<Flow> flows;         // accepted redirections
  double rejected_gb = 0.0;
  int rejections = 0;          // traffic with no ON DU able to take it
  int latency_violations = 0;  // traffic whose only feasible host is out of reach (also dropped)

  double mean_latency_us() const;
  double max_latency_us() const;
};

/// Greedy redirection for one hour. ON DUs first host their own traffic (up
/// to capacity, excess rejected). OFF sites, in ascending index order, go to
/// the nearest ON DU (ties by index) whose load plus the new traffic stays
/// strictly below capacity. A host beyond the latency bound is never used.
Redirection redirect_traffic(const Scenario& scenario, Eigen::Index hour,
                             const JointAction& action);

struct RewardBreakdown {
  double energy = 0.0;   // saving in [0, 1]
  double delay = 0.0;    // in [0, 1]
  double penalty = 0.0;  // <= 0
  double reward = 0.0;
};

/// Saving = 1 - mean consumption fraction. Delay = sum of redirected-flow
/// latencies over the bound, averaged across all n sites. Penalty = -(latency
/// violations + rejections) / n.
RewardBreakdown compute_reward(const Scenario& scenario, const JointAction& action,
                               const Redirection& redirection);

/// Power draw of one server at `utilization` in [0, 1].
constexpr double kServerWatts = 650.0;
inline double server_watts(double utilization) {
  return kServerWatts * (kIdleFraction + kLoadFraction * utilization);
}

/// Total watts of the ON DUs under `redirection`.
double power_watts(const Scenario& scenario, const JointAction& action,
                   const Redirection& redirection);

/// Stepwise environment over a scenario: hour pointer and DU power states.
class DuEnvironment {
 public:
  explicit DuEnvironment(Scenario scenario);

  const Scenario& scenario() const { return scenario_; }
  Eigen::Index hour() const { return hour_; }
  const JointAction& power() const { return power_; }

  /// Moves to `hour` with every DU ON.
  void reset(Eigen::Index hour);

  struct Step {
    Redirection redirection;
    RewardBreakdown reward;
  };
  /// Applies `action` at the current hour, then advances the hour.
  Step step(const JointAction& action);

 private:
  Scenario scenario_;
  Eigen::Index hour_ = 0;
  JointAction power_;
};

}  // namespace ranpool::dups
