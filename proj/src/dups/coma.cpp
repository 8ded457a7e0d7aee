#include "ranpool/dups/coma.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "ranpool/dups/returns.hpp"
#include "ranpool/io.hpp"
#include "ranpool/nn/adam.hpp"

namespace ranpool::dups {

void ComaConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("coma config: alpha must be in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("coma config: beta must be >= 0");
  if (!(d_gb > 0.0)) throw ConfigError("coma config: d_gb must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("coma config: lambda must be in [0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("coma config: gamma must be in [0, 1]");
  if (episodes < 0) throw ConfigError("coma config: episodes must be >= 0");
  if (steps < 1) throw ConfigError("coma config: steps must be >= 1");
  if (buffer < 1) throw ConfigError("coma config: buffer must be >= 1");
  if (sync_every < 0) throw ConfigError("coma config: sync_every must be >= 0");
  if (lr_actor < 0.0 || lr_critic < 0.0) throw ConfigError("coma config: learning rates must be >= 0");
  if (actor_hidden < 1 || critic_hidden < 1) throw ConfigError("coma config: hidden sizes must be >= 1");
  if (batch_size < 1) throw ConfigError("coma config: batch_size must be >= 1");
  if (critic_updates < 0) throw ConfigError("coma config: critic_updates must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("coma config: grad_clip must be positive");
}

ComaConfig coma_config_from_json(const std::string& json_text) {
  ComaConfig c;
  try {
    const auto j = nlohmann::json::parse(json_text);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.d_gb = j.value("d_gb", c.d_gb);
    c.lambda = j.value("lambda", c.lambda);
    c.gamma = j.value("gamma", c.gamma);
    c.episodes = j.value("episodes", c.episodes);
    c.steps = j.value("steps", c.steps);
    c.buffer = j.value("buffer", c.buffer);
    c.sync_every = j.value("sync_every", c.sync_every);
    c.lr_actor = j.value("lr_actor", c.lr_actor);
    c.lr_critic = j.value("lr_critic", c.lr_critic);
    c.seed = j.value("seed", c.seed);
    c.actor_hidden = j.value("actor_hidden", c.actor_hidden);
    c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.critic_updates = j.value("critic_updates", c.critic_updates);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("coma config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const ComaConfig& c) {
  nlohmann::json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["d_gb"] = c.d_gb;
  j["lambda"] = c.lambda;
  j["gamma"] = c.gamma;
  j["episodes"] = c.episodes;
  j["steps"] = c.steps;
  j["buffer"] = c.buffer;
  j["sync_every"] = c.sync_every;
  j["lr_actor"] = c.lr_actor;
  j["lr_critic"] = c.lr_critic;
  j["seed"] = c.seed;
  j["actor_hidden"] = c.actor_hidden;
  j["critic_hidden"] = c.critic_hidden;
  j["batch_size"] = c.batch_size;
  j["critic_updates"] = c.critic_updates;
  j["grad_clip"] = c.grad_clip;
  return j.dump();
}

EdgeClass edge_class_for_rank(int rank, int edges) {
  if (edges < 1 || rank < 0 || rank >= edges) throw ConfigError("edge_class_for_rank: rank out of range");
  return static_cast<EdgeClass>(3 * rank / edges);
}

std::string to_string(EdgeClass c) {
  switch (c) {
    case EdgeClass::kHigh: return "high";
    case EdgeClass::kModerate: return "moderate";
    case EdgeClass::kLow: return "low";
  }
  return "high";
}

void apply_edge_class(ComaConfig& config, EdgeClass c) {
  static constexpr double kAlpha[] = {0.8, 0.6, 0.4};
  static constexpr double kCapacity[] = {192.0, 256.0, 320.0};
  config.alpha = kAlpha[static_cast<int>(c)];
  config.d_gb = kCapacity[static_cast<int>(c)];
}

void apply_reward_config(Scenario& scenario, const ComaConfig& config) {
  scenario.alpha = config.alpha;
  scenario.beta = config.beta;
  scenario.capacity_gb = config.d_gb;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

ComaNets::ComaNets(Eigen::Index agents, const ComaConfig& config, std::uint64_t init_seed)
    : agents_(agents) {
  if (agents < 1) throw ConfigError("ComaNets: at least one agent is required");
  Rng rng(init_seed);
  lstm_ = nn::Lstm::create(actor, "actor.lstm", nn::Partition::kOther, observation_size(),
                           config.actor_hidden, rng);
  head_ = nn::Dense::create(actor, "actor.head", nn::Partition::kOther, config.actor_hidden, 2, rng);
  const Eigen::Index in = state_size() + 2 * agents_;
  c1_ = nn::Dense::create(critic, "critic.fc1", nn::Partition::kOther, in, config.critic_hidden, rng);
  c2_ = nn::Dense::create(critic, "critic.fc2", nn::Partition::kOther, config.critic_hidden,
                          config.critic_hidden, rng);
  c3_ = nn::Dense::create(critic, "critic.out", nn::Partition::kOther, config.critic_hidden, 1, rng);
  target_critic = critic;
}

Eigen::MatrixXd ComaNets::observe(const Scenario& scenario, Eigen::Index hour,
                                  const JointAction& power) const {
  const double users_scale = scenario.users_scale();
  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(agents_, observation_size());
  for (Eigen::Index j = 0; j < agents_; ++j) {
    obs(j, 0) = static_cast<double>(hour % data::kHoursPerDay) / data::kHoursPerDay;
    obs(j, 1) = power(j);
    obs(j, 2) = scenario.traffic(hour, j) / scenario.capacity_gb;
    obs(j, 3) = scenario.users(hour, j) / users_scale;
    obs(j, 4 + j) = 1.0;
  }
  return obs;
}

Eigen::VectorXd ComaNets::state_features(const Scenario& scenario, Eigen::Index hour,
                                         const JointAction& power) const {
  Eigen::VectorXd s(state_size());
  s(0) = static_cast<double>(hour % data::kHoursPerDay) / data::kHoursPerDay;
  s.segment(1, agents_) = power.cast<double>();
  s.segment(1 + agents_, agents_) = scenario.traffic.row(hour).transpose() / scenario.capacity_gb;
  s.segment(1 + 2 * agents_, agents_) = scenario.users.row(hour).transpose() / scenario.users_scale();
  return s;
}

nn::Lstm::State ComaNets::initial_state() const { return lstm_.zero_state(agents_); }

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace

Eigen::MatrixXd ComaNets::policy_step(const Eigen::MatrixXd& observations,
                                      nn::Lstm::State& state) const {
  state = lstm_.step(actor, observations, state);
  return softmax_rows(head_.forward(actor, state.h));
}

std::vector<Eigen::MatrixXd> ComaNets::policy(const std::vector<Eigen::MatrixXd>& observations) const {
  auto state = initial_state();
  std::vector<Eigen::MatrixXd> out;
  out.reserve(observations.size());
  for (const auto& o : observations) out.push_back(policy_step(o, state));
  return out;
}

Eigen::MatrixXd ComaNets::critic_input(const Eigen::VectorXd& state, const JointAction& action) const {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, state_size() + 2 * agents_);
  x.leftCols(state_size()) = state.transpose();
  for (Eigen::Index j = 0; j < agents_; ++j) x(0, state_size() + 2 * j + (action(j) != 0 ? 1 : 0)) = 1.0;
  return x;
}

double ComaNets::q(const nn::ModelParams& params, const Eigen::VectorXd& state,
                   const JointAction& action) const {
  const Eigen::MatrixXd x = critic_input(state, action);
  const Eigen::MatrixXd h1 = nn::relu(c1_.forward(params, x));
  const Eigen::MatrixXd h2 = nn::relu(c2_.forward(params, h1));
  return c3_.forward(params, h2)(0, 0);
}

double ComaNets::critic_gradient(const std::vector<const Transition*>& batch,
                                 const std::vector<double>& targets, nn::ModelParams& grads) const {
  if (batch.size() != targets.size()) throw ShapeError("critic_gradient: batch and targets differ");
  if (batch.empty()) return 0.0;
  const auto rows = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd x(rows, state_size() + 2 * agents_);
  for (Eigen::Index i = 0; i < rows; ++i) x.row(i) = critic_input(batch[i]->state, batch[i]->action);
  const Eigen::MatrixXd z1 = c1_.forward(critic, x);
  const Eigen::MatrixXd h1 = nn::relu(z1);
  const Eigen::MatrixXd z2 = c2_.forward(critic, h1);
  const Eigen::MatrixXd h2 = nn::relu(z2);
  const Eigen::MatrixXd out = c3_.forward(critic, h2);
  Eigen::MatrixXd dy(rows, 1);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double e = out(i, 0) - targets[i];
    loss += 0.5 * e * e;
    dy(i, 0) = e / static_cast<double>(rows);
  }
  const Eigen::MatrixXd dh2 = c3_.backward(critic, h2, dy, grads);
  const Eigen::MatrixXd dh1 = c2_.backward(critic, h1, nn::relu_backward(z2, dh2), grads);
  c1_.backward(critic, x, nn::relu_backward(z1, dh1), grads);
  return loss / static_cast<double>(rows);
}

void ComaNets::actor_gradient(const std::vector<Eigen::MatrixXd>& observations,
                              const std::vector<JointAction>& actions,
                              const Eigen::MatrixXd& advantages, nn::ModelParams& grads) const {
  const auto steps = observations.size();
  if (actions.size() != steps || static_cast<std::size_t>(advantages.rows()) != steps ||
      advantages.cols() != agents_)
    throw ShapeError("actor_gradient: episode shapes differ");
  if (steps == 0) return;
  nn::Lstm::Cache cache;
  const nn::Sequence h = lstm_.forward(actor, observations, cache);
  nn::Sequence dh(steps);
  const double inv_t = 1.0 / static_cast<double>(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::MatrixXd probs = softmax_rows(head_.forward(actor, h[t]));
    Eigen::MatrixXd dlogits(agents_, 2);
    for (Eigen::Index j = 0; j < agents_; ++j) {
      const int a = actions[t](j) != 0 ? 1 : 0;
      for (int k = 0; k < 2; ++k) {
        dlogits(j, k) = -advantages(static_cast<Eigen::Index>(t), j) * inv_t *
                        ((k == a ? 1.0 : 0.0) - probs(j, k));
      }
    }
    dh[t] = head_.backward(actor, h[t], dlogits, grads);
  }
  lstm_.backward(actor, observations, cache, dh, grads);
}

namespace {

/// Critic targets for every buffered transition, episode by episode.
std::vector<double> critic_targets(const ComaNets& nets, const ReplayBuffer& buffer,
                                   const ComaConfig& config) {
  std::vector<double> targets(buffer.size());
  std::size_t begin = 0;
  while (begin < buffer.size()) {
    std::size_t end = begin;
    while (end < buffer.size() && buffer[end].episode == buffer[begin].episode) ++end;
    const auto len = static_cast<Eigen::Index>(end - begin);
    Eigen::VectorXd rewards(len), values(len);
    for (Eigen::Index k = 0; k < len; ++k) {
      const auto& tr = buffer[begin + static_cast<std::size_t>(k)];
      rewards(k) = tr.reward;
      values(k) = nets.q(nets.target_critic, tr.state, tr.action);
    }
    const Eigen::VectorXd y = lambda_returns(rewards, values, config.lambda, config.gamma);
    for (Eigen::Index k = 0; k < len; ++k) targets[begin + static_cast<std::size_t>(k)] = y(k);
    begin = end;
  }
  return targets;
}

}  // namespace

TrainResult train_coma(const Scenario& scenario, const ComaConfig& config) {
  config.validate();
  scenario.validate();
  if (scenario.hours() < config.steps)
    throw ConfigError("train_coma: scenario has fewer hours than one episode");
  const Eigen::Index n = scenario.n();
  TrainResult result{ComaNets(n, config, splitmix64(config.seed ^ fnv1a64("coma-init"))), {}, {}, 0};
  ComaNets& nets = result.nets;
  nets.sync_target();
  nn::Adam actor_opt(nets.actor);
  nn::Adam critic_opt(nets.critic);
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer));
  DuEnvironment env(scenario);
  Rng rng = derive_rng(config.seed, "coma");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Index episodes_per_trace = scenario.hours() / config.steps;
  std::uniform_int_distribution<Eigen::Index> pick_start(0, episodes_per_trace - 1);
  long total_steps = 0;

  for (int e = 0; e < config.episodes; ++e) {
    env.reset(config.steps * pick_start(rng));
    auto state = nets.initial_state();
    std::vector<Eigen::MatrixXd> observations;
    std::vector<Eigen::MatrixXd> probabilities;
    std::vector<JointAction> actions;
    std::vector<Eigen::VectorXd> states;
    double reward_sum = 0.0;
    for (int t = 0; t < config.steps; ++t) {
      const Eigen::Index hour = env.hour();
      Eigen::MatrixXd obs = nets.observe(scenario, hour, env.power());
      Eigen::VectorXd s = nets.state_features(scenario, hour, env.power());
      const Eigen::MatrixXd probs = nets.policy_step(obs, state);
      if (!probs.allFinite())
        throw NumericalError("train_coma: non-finite policy at episode " + std::to_string(e) +
                             " step " + std::to_string(t));
      JointAction a(n);
      for (Eigen::Index j = 0; j < n; ++j) a(j) = unit(rng) < probs(j, 1) ? 1 : 0;
      const auto outcome = env.step(a);
      reward_sum += outcome.reward.reward;
      result.trace.push_back({e, t, static_cast<int>(hour), static_cast<int>(a.sum()),
                              outcome.redirection.rejected_gb, outcome.reward});
      buffer.push({e, t, s, obs, a, outcome.reward.reward});
      observations.push_back(std::move(obs));
      probabilities.push_back(probs);
      actions.push_back(a);
      states.push_back(std::move(s));
      ++total_steps;
      if (total_steps % config.sync_period() == 0) {
        nets.sync_target();
        ++result.target_syncs;
      }
    }
    result.curve.push_back({e, reward_sum / config.steps});

    // Critic: minibatches from the buffer against target-critic lambda-returns.
    const std::vector<double> targets = critic_targets(nets, buffer, config);
    std::vector<std::size_t> order(buffer.size());
    for (int u = 0; u < config.critic_updates; ++u) {
      std::iota(order.begin(), order.end(), 0);
      const std::size_t take = std::min<std::size_t>(order.size(), config.batch_size);
      for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      std::vector<const Transition*> batch;
      std::vector<double> y;
      for (std::size_t i = 0; i < take; ++i) {
        batch.push_back(&buffer[order[i]]);
        y.push_back(targets[order[i]]);
      }
      nn::ModelParams grads = nets.critic.zeros_like();
      nets.critic_gradient(batch, y, grads);
      if (!grads.all_finite())
        throw NumericalError("train_coma: non-finite critic gradient at episode " +
                             std::to_string(e) + " step " + std::to_string(config.steps - 1));
      nn::clip_global_norm(grads, config.grad_clip);
      if (config.lr_critic > 0.0) critic_opt.step(nets.critic, grads, config.lr_critic);
    }

    // Actor: counterfactual advantages from the current critic.
    Eigen::MatrixXd advantages(config.steps, n);
    for (int t = 0; t < config.steps; ++t) {
      const auto q = [&](const JointAction& joint) { return nets.q(states[t], joint); };
      for (Eigen::Index j = 0; j < n; ++j) {
        advantages(t, j) = counterfactual_advantage(q, actions[t], probabilities[t].row(j), j);
      }
    }
    if (!advantages.allFinite())
      throw NumericalError("train_coma: non-finite advantage at episode " + std::to_string(e));
    nn::ModelParams grads = nets.actor.zeros_like();
    nets.actor_gradient(observations, actions, advantages, grads);
    if (!grads.all_finite())
      throw NumericalError("train_coma: non-finite actor gradient at episode " + std::to_string(e) +
                           " step " + std::to_string(config.steps - 1));
    nn::clip_global_norm(grads, config.grad_clip);
    if (config.lr_actor > 0.0) actor_opt.step(nets.actor, grads, config.lr_actor);
  }
  return result;
}

std::vector<JointAction> greedy_actions(const Scenario& scenario, const ComaNets& nets, int steps) {
  if (steps < 1) throw ConfigError("greedy_actions: steps must be >= 1");
  if (nets.agents() != scenario.n()) throw ShapeError("greedy_actions: agent count differs from sites");
  std::vector<JointAction> out;
  auto state = nets.initial_state();
  JointAction power = JointAction::Ones(scenario.n());
  for (Eigen::Index h = 0; h < scenario.hours(); ++h) {
    if (h % steps == 0) {
      state = nets.initial_state();
      power = JointAction::Ones(scenario.n());
    }
    const Eigen::MatrixXd probs = nets.policy_step(nets.observe(scenario, h, power), state);
    JointAction a(scenario.n());
    for (Eigen::Index j = 0; j < scenario.n(); ++j) a(j) = probs(j, 1) >= probs(j, 0) ? 1 : 0;
    out.push_back(a);
    power = a;
  }
  return out;
}

std::vector<report::PoolingRow> evaluate_actions(const Scenario& scenario,
                                                 const std::vector<JointAction>& actions,
                                                 const std::string& strategy) {
  if (static_cast<Eigen::Index>(actions.size()) != scenario.hours())
    throw ShapeError("evaluate_actions: need one action per hour");
  std::vector<report::PoolingRow> rows;
  for (Eigen::Index h = 0; h < scenario.hours(); ++h) {
    const auto r = redirect_traffic(scenario, h, actions[h]);
    report::PoolingRow row;
    row.strategy = strategy;
    row.hour = static_cast<int>(h);
    row.active_servers = static_cast<int>(actions[h].sum());
    row.power_watts = power_watts(scenario, actions[h], r);
    row.rejected_gb = r.rejected_gb;
    row.mean_latency_us = r.mean_latency_us();
    row.max_latency_us = r.max_latency_us();
    row.lower_bound = report::lower_bound_servers(scenario.traffic.row(h).sum(), scenario.capacity_gb);
    rows.push_back(row);
  }
  return rows;
}

std::vector<report::PoolingRow> evaluate_policy(const Scenario& scenario, const ComaNets& nets,
                                                int steps) {
  return evaluate_actions(scenario, greedy_actions(scenario, nets, steps));
}

std::string learning_curve_csv(const std::vector<LearningPoint>& curve) {
  io::CsvWriter w({"episode", "mean_reward"});
  for (const auto& p : curve) w.row({std::to_string(p.episode), io::fmt(p.mean_reward)});
  return w.str();
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  io::CsvWriter w({"episode", "step", "hour", "active", "rejected_gb", "energy", "delay",
                   "penalty", "reward"});
  for (const auto& r : trace) {
    w.row({std::to_string(r.episode), std::to_string(r.step), std::to_string(r.hour),
           std::to_string(r.active), io::fmt(r.rejected_gb), io::fmt(r.reward.energy),
           io::fmt(r.reward.delay), io::fmt(r.reward.penalty), io::fmt(r.reward.reward)});
  }
  return w.str();
}

Scenario scenario_from_csv(const std::string& text,
                           const std::vector<std::pair<StationId, data::Coordinate>>& sites,
                           const ComaConfig& config) {
  const auto table = io::parse_csv(text);
  const std::size_t c_hour = table.column("hour");
  const std::size_t c_bs = table.column("bs_id");
  const std::size_t c_traffic = table.column("traffic_gb");
  const std::size_t c_users = table.column("users");
  std::map<StationId, Eigen::Index> index;
  Scenario s;
  for (const auto& [id, coord] : sites) {
    if (!index.emplace(id, static_cast<Eigen::Index>(s.sites.size())).second)
      throw ParseError("scenario csv: duplicate site " + std::to_string(id));
    s.sites.push_back(coord);
    s.ids.push_back(id);
  }
  long max_hour = -1;
  std::vector<std::tuple<long, Eigen::Index, double, double>> cells;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    try {
      const long hour = std::stol(row.at(c_hour));
      const StationId id = std::stoll(row.at(c_bs));
      const auto it = index.find(id);
      if (it == index.end()) continue;  // sites outside this scenario
      if (hour < 0) throw ParseError("negative hour");
      cells.emplace_back(hour, it->second, std::stod(row.at(c_traffic)), std::stod(row.at(c_users)));
      max_hour = std::max(max_hour, hour);
    } catch (const std::logic_error& e) {
      throw ParseError("scenario csv: bad row " + std::to_string(r + 2) + ": " + e.what());
    }
  }
  if (max_hour < 0) throw ParseError("scenario csv: no rows for the requested sites");
  const Eigen::Index hours = max_hour + 1;
  s.traffic = Eigen::MatrixXd::Constant(hours, s.n(), std::nan(""));
  s.users = Eigen::MatrixXd::Zero(hours, s.n());
  for (const auto& [hour, site, traffic, users] : cells) {
    s.traffic(hour, site) = traffic;
    s.users(hour, site) = users;
  }
  if (!s.traffic.allFinite()) throw ParseError("scenario csv: missing (hour, site) cells");
  apply_reward_config(s, config);
  s.validate();
  return s;
}

std::string scenario_csv(const Scenario& scenario) {
  io::CsvWriter w({"hour", "bs_id", "traffic_gb", "users"});
  for (Eigen::Index h = 0; h < scenario.hours(); ++h) {
    for (Eigen::Index j = 0; j < scenario.n(); ++j) {
      const StationId id = scenario.ids.empty() ? j : scenario.ids[j];
      w.row({std::to_string(h), std::to_string(id), io::fmt(scenario.traffic(h, j)),
             io::fmt(scenario.users(h, j))});
    }
  }
  return w.str();
}

}  // namespace ranpool::dups
