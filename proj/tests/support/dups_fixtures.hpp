#pragma once

#include <Eigen/Core>

#include <cmath>
#include <random>

#include "ranpool/data.hpp"
#include "ranpool/dups/coma.hpp"
#include "ranpool/dups/environment.hpp"

namespace ranpool::testing {

/// One DU over two hours: idle at hour 0 (OFF is best), 100 GB at hour 1 (ON
/// is best, OFF rejects everything).
inline dups::Scenario toy_scenario() {
  dups::Scenario s;
  s.sites = {{0.0, 0.0}};
  s.ids = {1};
  s.traffic = Eigen::MatrixXd(2, 1);
  s.traffic << 0.0, 100.0;
  s.users = Eigen::MatrixXd(2, 1);
  s.users << 0.0, 50.0;
  s.capacity_gb = 192.0;
  s.alpha = 0.5;
  s.beta = 1.0;
  return s;
}

inline dups::ComaConfig toy_config(std::uint64_t seed) {
  dups::ComaConfig c;
  c.alpha = 0.5;
  c.beta = 1.0;
  c.steps = 2;
  c.episodes = 1500;
  c.buffer = 40;
  c.sync_every = 10;
  c.actor_hidden = 8;
  c.critic_hidden = 16;
  c.batch_size = 40;
  c.seed = seed;
  return c;
}

/// Twelve stations within a 3 km disk (all pairs inside the 10 km reach),
/// a daily shape peaking at 20h with a deep night trough, `days` noisy days.
/// Per-station peaks near `peak_gb` keep several stations per server even at
/// the busiest hour, so serving beats rejecting under alpha 0.8, beta 0.5.
inline dups::Scenario desk_scenario(std::uint64_t seed, int days = 3, double peak_gb = 50.0) {
  constexpr int kSites = 12;
  Rng rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> radius(0.0, 1.0);
  std::uniform_real_distribution<double> amplitude(0.8, 1.2);
  std::normal_distribution<double> noise(0.0, 0.05);
  dups::Scenario s;
  Eigen::VectorXd scale(kSites);
  for (int j = 0; j < kSites; ++j) {
    const double r = 3.0 * std::sqrt(radius(rng));
    const double a = angle(rng);
    s.sites.push_back({r * std::cos(a), r * std::sin(a)});
    s.ids.push_back(j + 1);
    scale(j) = amplitude(rng);
  }
  const Eigen::VectorXd shape = data::daily_shape(20, 3.0, 0.08);
  scale *= peak_gb / shape.maxCoeff();
  const int hours = days * data::kHoursPerDay;
  s.traffic.resize(hours, kSites);
  s.users.resize(hours, kSites);
  for (int h = 0; h < hours; ++h) {
    for (int j = 0; j < kSites; ++j) {
      const double v = std::max(0.0, scale(j) * shape(h % data::kHoursPerDay) * (1.0 + noise(rng)));
      s.traffic(h, j) = v;
      s.users(h, j) = 12.0 * v;
    }
  }
  s.capacity_gb = 192.0;
  s.alpha = 0.8;
  s.beta = 0.5;
  return s;
}

/// Hours whose total traffic is at most 30% of the busiest hour's.
inline std::vector<int> trough_hours(const dups::Scenario& s) {
  const Eigen::VectorXd totals = s.traffic.rowwise().sum();
  std::vector<int> out;
  for (Eigen::Index h = 0; h < totals.size(); ++h) {
    if (totals(h) <= 0.3 * totals.maxCoeff()) out.push_back(static_cast<int>(h));
  }
  return out;
}

inline dups::ComaConfig desk_config(std::uint64_t seed) {
  dups::ComaConfig c;
  c.alpha = 0.8;
  c.beta = 0.5;
  c.d_gb = 192.0;
  c.seed = seed;
  return c;
}

}  // namespace ranpool::testing
