#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ranpool/nn/params.hpp"

namespace ranpool::testing {

struct GradProbe {
  std::size_t tensor = 0;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

/// |a - n| / max(|a| + |n|, floor). The floor keeps exact zeros (dead ReLU units)
/// from dividing by zero without hiding any gradient above ~1e-7.
inline double relative_error(double a, double n, double floor = 1e-7) {
  return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor);
}

/// Central-difference check of `analytic` (same layout as `params`) at random
/// coordinates. `loss` must evaluate the scalar objective for given parameters.
inline std::vector<GradProbe> check_param_gradients(
    const nn::ModelParams& params, const nn::ModelParams& analytic,
    const std::function<double(const nn::ModelParams&)>& loss, int probes, std::uint64_t seed,
    double step = 1e-4) {
  std::mt19937_64 rng(seed);
  const Eigen::Index total = params.parameter_count();
  std::uniform_int_distribution<Eigen::Index> pick(0, total - 1);
  std::vector<GradProbe> out;
  for (int k = 0; k < probes; ++k) {
    Eigen::Index flat = pick(rng);
    std::size_t t = 0;
    while (flat >= params[t].size()) flat -= params[t++].size();
    nn::ModelParams plus = params, minus = params;
    plus[t](flat) += step;
    minus[t](flat) -= step;
    GradProbe p;
    p.tensor = t;
    p.index = flat;
    p.analytic = analytic[t](flat);
    p.numeric = (loss(plus) - loss(minus)) / (2.0 * step);
    p.rel_error = relative_error(p.analytic, p.numeric);
    out.push_back(p);
  }
  return out;
}

inline double max_rel_error(const std::vector<GradProbe>& probes) {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, p.rel_error);
  return m;
}

}  // namespace ranpool::testing
