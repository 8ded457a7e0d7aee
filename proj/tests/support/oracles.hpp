#pragma once

// Reference implementations written independently of the library code paths.
// They favour the most literal formula over speed.

#include <cmath>
#include <functional>
#include <vector>

namespace ranpool::testing {

/// Two-pass Pearson correlation: means first, then centered sums, on plain vectors.
inline double pcc_two_pass(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Visits every assignment of n items to m labels where every label is used,
/// i.e. every partition into exactly m blocks (each partition appears m! times).
inline void for_each_labeling(int n, int m, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  while (true) {
    std::vector<bool> used(static_cast<std::size_t>(m), false);
    for (int l : label) used[static_cast<std::size_t>(l)] = true;
    bool all = true;
    for (bool u : used) all = all && u;
    if (all) fn(label);
    int i = 0;
    while (i < n && ++label[static_cast<std::size_t>(i)] == m) label[static_cast<std::size_t>(i++)] = 0;
    if (i == n) return;
  }
}

/// Score of a labeling: mean over groups of mean within-group pairwise
/// correlation, singletons counting 1.
template <typename Corr>
double labeling_score(const Corr& corr, const std::vector<int>& label, int m) {
  double total = 0.0;
  for (int g = 0; g < m; ++g) {
    std::vector<int> members;
    for (std::size_t i = 0; i < label.size(); ++i)
      if (label[i] == g) members.push_back(static_cast<int>(i));
    if (members.size() == 1) {
      total += 1.0;
      continue;
    }
    double s = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        s += corr(members[a], members[b]);
        ++pairs;
      }
    total += s / pairs;
  }
  return total / m;
}

/// Forward-view n-step return by literal summation. rewards[k] is the reward
/// received on leaving step k; values[k] = V(S_k); V beyond the last step is 0.
inline double n_step_direct(const std::vector<double>& rewards, const std::vector<double>& values,
                            int t, int n, double gamma) {
  const int T = static_cast<int>(rewards.size());
  double g = 0.0;
  for (int k = 0; k < n && t + k < T; ++k) g += std::pow(gamma, k) * rewards[static_cast<std::size_t>(t + k)];
  if (t + n < T) g += std::pow(gamma, n) * values[static_cast<std::size_t>(t + n)];
  return g;
}

/// Truncated lambda-return by enumerating n = 1..N with the residual weight
/// lambda^(N-1) on the last (Monte-Carlo) term.
inline double lambda_direct(const std::vector<double>& rewards, const std::vector<double>& values,
                            int t, double lambda, double gamma) {
  const int N = static_cast<int>(rewards.size()) - t;
  double y = 0.0;
  for (int n = 1; n < N; ++n)
    y += (1.0 - lambda) * std::pow(lambda, n - 1) * n_step_direct(rewards, values, t, n, gamma);
  y += std::pow(lambda, N - 1) * n_step_direct(rewards, values, t, N, gamma);
  return y;
}

/// Counterfactual advantage from a table of joint-action values indexed by
/// bitmask (bit j = agent j ON): Q[taken] minus the policy-weighted values
/// with only agent j's bit varied.
inline double counterfactual_tabular(const std::vector<double>& q_table, unsigned taken, int agent,
                                     double p_off, double p_on) {
  const unsigned off = taken & ~(1u << agent);
  const unsigned on = taken | (1u << agent);
  return q_table[taken] - (p_off * q_table[off] + p_on * q_table[on]);
}

}  // namespace ranpool::testing
