#include "ranpool/dups/environment.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace ranpool::dups {

double fh_latency(const data::Coordinate& a, const data::Coordinate& b) {
  return kMicrosecondsPerKm * data::distance_km(a, b);
}

double Scenario::users_scale() const {
  const double m = users.size() > 0 ? users.maxCoeff() : 0.0;
  return m > 1.0 ? m : 1.0;
}

void Scenario::validate() const {
  if (sites.empty()) throw ConfigError("scenario: at least one site is required");
  if (!ids.empty() && ids.size() != sites.size())
    throw ShapeError("scenario: ids and sites differ in length");
  if (traffic.cols() != n()) throw ShapeError("scenario: traffic needs one column per site");
  if (users.rows() != traffic.rows() || users.cols() != traffic.cols())
    throw ShapeError("scenario: users and traffic shapes differ");
  if (traffic.rows() < 1) throw ConfigError("scenario: at least one hour is required");
  if (!(capacity_gb > 0.0)) throw ConfigError("scenario: capacity must be positive");
  if (!(latency_bound_us > 0.0)) throw ConfigError("scenario: latency bound must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("scenario: alpha must be in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("scenario: beta must be >= 0");
  if (!traffic.allFinite() || (traffic.array() < 0.0).any())
    throw ConfigError("scenario: traffic must be finite and non-negative");
}

double Redirection::mean_latency_us() const {
  if (flows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : flows) s += f.latency_us;
  return s / static_cast<double>(flows.size());
}

double Redirection::max_latency_us() const {
  double m = 0.0;
  for (const auto& f : flows) m = std::max(m, f.latency_us);
  return m;
}

Redirection redirect_traffic(const Scenario& scenario, Eigen::Index hour,
                             const JointAction& action) {
  const Eigen::Index n = scenario.n();
  if (action.size() != n) throw ShapeError("redirect_traffic: action length differs from site count");
  if (hour < 0 || hour >= scenario.hours()) throw ShapeError("redirect_traffic: hour out of range");
  const double d = scenario.capacity_gb;
  Redirection r;
  r.load = Eigen::VectorXd::Zero(n);
  r.host.assign(static_cast<std::size_t>(n), -1);

  std::vector<Eigen::Index> on;
  for (Eigen::Index b = 0; b < n; ++b) {
    if (action(b) != 0) on.push_back(b);
  }
  for (Eigen::Index b : on) {
    const double t = scenario.traffic(hour, b);
    if (t <= 0.0) continue;
    const double kept = std::min(t, d);
    r.load(b) = kept;
    r.host[b] = b;
    if (t > d) {
      r.rejected_gb += t - d;
      ++r.rejections;
    }
  }

  for (Eigen::Index b = 0; b < n; ++b) {
    if (action(b) != 0) continue;
    const double t = scenario.traffic(hour, b);
    if (t <= 0.0) continue;
    std::vector<std::pair<double, Eigen::Index>> candidates;
    candidates.reserve(on.size());
    for (Eigen::Index h : on) {
      candidates.emplace_back(fh_latency(scenario.sites[b], scenario.sites[h]), h);
    }
    std::sort(candidates.begin(), candidates.end());
    bool placed = false;
    bool out_of_reach = false;
    for (const auto& [latency, h] : candidates) {
      if (r.load(h) + t < d) {
        if (latency <= scenario.latency_bound_us) {
          r.load(h) += t;
          r.host[b] = h;
          r.flows.push_back({b, h, t, latency});
          placed = true;
        } else {
          out_of_reach = true;
        }
        break;
      }
    }
    if (!placed) {
      r.rejected_gb += t;
      if (out_of_reach) {
        ++r.latency_violations;
      } else {
        ++r.rejections;
      }
    }
  }
  return r;
}

RewardBreakdown compute_reward(const Scenario& scenario, const JointAction& action,
                               const Redirection& redirection) {
  const Eigen::Index n = scenario.n();
  if (action.size() != n) throw ShapeError("compute_reward: action length differs from site count");
  double consumption = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    if (action(b) != 0)
      consumption += kIdleFraction + kLoadFraction * redirection.load(b) / scenario.capacity_gb;
  }
  double latency = 0.0;
  for (const auto& f : redirection.flows) latency += f.latency_us / scenario.latency_bound_us;
  const double nd = static_cast<double>(n);
  RewardBreakdown out;
  out.energy = 1.0 - consumption / nd;
  out.delay = latency / nd;
  out.penalty = -static_cast<double>(redirection.latency_violations + redirection.rejections) / nd;
  out.reward = scenario.alpha * out.energy - (1.0 - scenario.alpha) * out.delay +
               scenario.beta * out.penalty;
  return out;
}

double power_watts(const Scenario& scenario, const JointAction& action,
                   const Redirection& redirection) {
  double w = 0.0;
  for (Eigen::Index b = 0; b < scenario.n(); ++b) {
    if (action(b) != 0) w += server_watts(redirection.load(b) / scenario.capacity_gb);
  }
  return w;
}

DuEnvironment::DuEnvironment(Scenario scenario) : scenario_(std::move(scenario)) {
  scenario_.validate();
  reset(0);
}

void DuEnvironment::reset(Eigen::Index hour) {
  if (hour < 0 || hour >= scenario_.hours()) throw ShapeError("DuEnvironment::reset: hour out of range");
  hour_ = hour;
  power_ = JointAction::Ones(scenario_.n());
}

DuEnvironment::Step DuEnvironment::step(const JointAction& action) {
  if (hour_ >= scenario_.hours()) throw ShapeError("DuEnvironment::step: past the last hour");
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    if (action(i) != 0 && action(i) != 1) throw ConfigError("DuEnvironment::step: actions must be 0 or 1");
  }
  Step s;
  s.redirection = redirect_traffic(scenario_, hour_, action);
  s.reward = compute_reward(scenario_, action, s.redirection);
  power_ = action;
  ++hour_;
  return s;
}

}  // namespace ranpool::dups
