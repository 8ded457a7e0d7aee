#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "ranpool/dups/environment.hpp"
#include "ranpool/nn/layers.hpp"
#include "ranpool/nn/params.hpp"
#include "ranpool/report.hpp"

namespace ranpool::dups {

struct ComaConfig {
  double alpha = 0.8;
  double beta = 0.5;
  double d_gb = 192.0;
  double lambda = 0.8;
  double gamma = 0.99;
  int episodes = 1500;
  int steps = 24;    // episode length in hours
  int buffer = 200;  // replay capacity in steps
  int sync_every = 0;  // target-critic period in steps; 0 uses `buffer`
  double lr_actor = 0.001;
  double lr_critic = 0.005;
  std::uint64_t seed = 0;
  int actor_hidden = 32;
  int critic_hidden = 64;
  int batch_size = 100;
  int critic_updates = 4;  // minibatch steps per episode
  double grad_clip = 10.0;

  int sync_period() const { return sync_every > 0 ? sync_every : buffer; }
  void validate() const;
};

ComaConfig coma_config_from_json(const std::string& json_text);
std::string to_json(const ComaConfig& c);

/// Traffic class of an edge cloud; sets the default energy weight and capacity.
enum class EdgeClass { kHigh, kModerate, kLow };

/// Class by traffic rank: the busiest third is high, the quietest third low.
EdgeClass edge_class_for_rank(int rank, int edges);
std::string to_string(EdgeClass c);
/// alpha 0.8 / 0.6 / 0.4 and d 192 / 256 / 320 GB for high / moderate / low.
void apply_edge_class(ComaConfig& config, EdgeClass c);

/// Copies alpha, beta and d_gb into the scenario, which is what the
/// environment reads during training and evaluation.
void apply_reward_config(Scenario& scenario, const ComaConfig& config);

/// One environment step as stored for learning.
struct Transition {
  long episode = 0;
  int step = 0;
  Eigen::VectorXd state;        // critic state features
  Eigen::MatrixXd observations;  // agents x observation size
  JointAction action;
  double reward = 0.0;
};

/// FIFO store of the most recent `capacity` transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  const std::deque<Transition>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// Decentralized recurrent actor shared by all agents (agent id one-hot in
/// the observation) and a centralized feed-forward critic with its target.
class ComaNets {
 public:
  ComaNets(Eigen::Index agents, const ComaConfig& config, std::uint64_t init_seed);

  Eigen::Index agents() const { return agents_; }
  Eigen::Index observation_size() const { return 4 + agents_; }
  Eigen::Index state_size() const { return 1 + 3 * agents_; }

  /// Per-agent rows: (hour/24, own power state, own traffic/d, own users/scale, agent one-hot).
  Eigen::MatrixXd observe(const Scenario& scenario, Eigen::Index hour,
                          const JointAction& power) const;
  /// (hour/24, power states, traffic/d, users/scale).
  Eigen::VectorXd state_features(const Scenario& scenario, Eigen::Index hour,
                                 const JointAction& power) const;

  nn::Lstm::State initial_state() const;
  /// Advances the actor one hour; returns agents x 2 probabilities of (OFF, ON).
  Eigen::MatrixXd policy_step(const Eigen::MatrixXd& observations, nn::Lstm::State& state) const;
  /// Probabilities for a whole episode of observations.
  std::vector<Eigen::MatrixXd> policy(const std::vector<Eigen::MatrixXd>& observations) const;

  double q(const nn::ModelParams& critic, const Eigen::VectorXd& state,
           const JointAction& action) const;
  double q(const Eigen::VectorXd& state, const JointAction& action) const {
    return q(critic, state, action);
  }

  /// Critic gradient of 0.5 * mean (Q - y)^2 over a batch; returns the loss.
  double critic_gradient(const std::vector<const Transition*>& batch,
                         const std::vector<double>& targets, nn::ModelParams& grads) const;
  /// Actor gradient of -(1/T) sum_t sum_j Z_tj log pi(a_tj) for one episode.
  void actor_gradient(const std::vector<Eigen::MatrixXd>& observations,
                      const std::vector<JointAction>& actions, const Eigen::MatrixXd& advantages,
                      nn::ModelParams& grads) const;

  void sync_target() { target_critic = critic; }

  nn::ModelParams actor;
  nn::ModelParams critic;
  nn::ModelParams target_critic;

 private:
  Eigen::MatrixXd critic_input(const Eigen::VectorXd& state, const JointAction& action) const;

  Eigen::Index agents_;
  nn::Lstm lstm_;
  nn::Dense head_;
  nn::Dense c1_, c2_, c3_;
};

struct LearningPoint {
  int episode = 0;
  double mean_reward = 0.0;
};

/// Per-step log with the full reward decomposition.
struct TraceRow {
  int episode = 0;
  int step = 0;
  int hour = 0;
  int active = 0;
  double rejected_gb = 0.0;
  RewardBreakdown reward;
};

struct TrainResult {
  ComaNets nets;
  std::vector<LearningPoint> curve;
  std::vector<TraceRow> trace;
  long target_syncs = 0;
};

/// COMA training: sample episodes from the stochastic policy, fit the critic
/// to lambda-returns built from the target critic, step the actor along
/// counterfactual advantages, sync the target critic on a fixed step period.
TrainResult train_coma(const Scenario& scenario, const ComaConfig& config);

/// Probability-argmax actions hour by hour from hour 0; actor state and power
/// states reset every `steps` hours as in training.
std::vector<JointAction> greedy_actions(const Scenario& scenario, const ComaNets& nets, int steps);

/// Report rows for a fixed action per hour.
std::vector<report::PoolingRow> evaluate_actions(const Scenario& scenario,
                                                 const std::vector<JointAction>& actions,
                                                 const std::string& strategy = report::kDups);

std::vector<report::PoolingRow> evaluate_policy(const Scenario& scenario, const ComaNets& nets,
                                                int steps);

std::string learning_curve_csv(const std::vector<LearningPoint>& curve);
std::string trace_csv(const std::vector<TraceRow>& trace);

/// Scenario from a `hour,bs_id,traffic_gb,users` CSV plus site coordinates.
Scenario scenario_from_csv(const std::string& text,
                           const std::vector<std::pair<StationId, data::Coordinate>>& sites,
                           const ComaConfig& config);
std::string scenario_csv(const Scenario& scenario);

}  // namespace ranpool::dups
