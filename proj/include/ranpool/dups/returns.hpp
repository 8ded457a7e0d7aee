#pragma once

#include <Eigen/Core>

#include <cmath>
#include <utility>

#include "ranpool/common.hpp"

namespace ranpool::dups {

// Indexing convention: rewards[k] is the reward received after acting in
// state k, values[k] the value estimate of state k. States at or past the end
// of the episode are terminal with value 0.

/// G_t^(n) = sum_{k<n} gamma^k rewards[t+k] + gamma^n values[t+n], truncated at
/// the episode end.
template <typename DerivedR, typename DerivedV>
typename DerivedR::Scalar n_step_return(const Eigen::DenseBase<DerivedR>& rewards,
                                        const Eigen::DenseBase<DerivedV>& values, Eigen::Index t,
                                        int n, typename DerivedR::Scalar gamma) {
  using Scalar = typename DerivedR::Scalar;
  if (n < 1) throw ConfigError("n_step_return: n must be >= 1");
  const Eigen::Index len = rewards.size();
  if (values.size() != len) throw ShapeError("n_step_return: rewards and values differ in length");
  if (t < 0 || t >= len) throw ShapeError("n_step_return: t outside the episode");
  Scalar g = 0;
  Scalar discount = 1;
  Eigen::Index k = 0;
  for (; k < n && t + k < len; ++k) {
    g += discount * rewards(t + k);
    discount *= gamma;
  }
  if (t + n < len) g += discount * values(t + n);
  return g;
}

/// y_t = (1 - lambda) sum_{n>=1} lambda^{n-1} G_t^(n). Past the episode end
/// every G^(n) equals the full return, so the tail collapses onto the last
/// term with weight lambda^{N-1}, N = steps remaining.
template <typename DerivedR, typename DerivedV>
typename DerivedR::Scalar lambda_return(const Eigen::DenseBase<DerivedR>& rewards,
                                        const Eigen::DenseBase<DerivedV>& values, Eigen::Index t,
                                        typename DerivedR::Scalar lambda,
                                        typename DerivedR::Scalar gamma) {
  using Scalar = typename DerivedR::Scalar;
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda_return: lambda must be in [0, 1]");
  const Eigen::Index len = rewards.size();
  if (values.size() != len) throw ShapeError("lambda_return: rewards and values differ in length");
  if (t < 0 || t >= len) throw ShapeError("lambda_return: t outside the episode");
  // Backward recursion: y_k = r_k + gamma ((1 - lambda) V_{k+1} + lambda y_{k+1}),
  // with y at the last step = r. Matches the forward sum term by term.
  Scalar y = rewards(len - 1);
  for (Eigen::Index k = len - 2; k >= t; --k) {
    y = rewards(k) + gamma * ((1 - lambda) * values(k + 1) + lambda * y);
  }
  return y;
}

/// lambda_return for every t of the episode in one backward pass.
template <typename DerivedR, typename DerivedV>
Eigen::Matrix<typename DerivedR::Scalar, Eigen::Dynamic, 1> lambda_returns(
    const Eigen::DenseBase<DerivedR>& rewards, const Eigen::DenseBase<DerivedV>& values,
    typename DerivedR::Scalar lambda, typename DerivedR::Scalar gamma) {
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda_returns: lambda must be in [0, 1]");
  const Eigen::Index len = rewards.size();
  if (values.size() != len) throw ShapeError("lambda_returns: rewards and values differ in length");
  Eigen::Matrix<typename DerivedR::Scalar, Eigen::Dynamic, 1> y(len);
  if (len == 0) return y;
  y(len - 1) = rewards(len - 1);
  for (Eigen::Index k = len - 2; k >= 0; --k) {
    y(k) = rewards(k) + gamma * ((1 - lambda) * values(k + 1) + lambda * y(k + 1));
  }
  return y;
}

/// Z = Q(A) - sum_a pi(a) Q(A with agent's action replaced by a), binary actions.
/// `q` maps a joint action (Eigen::VectorXi) to a scalar; `policy` holds the
/// agent's probabilities of (OFF, ON).
template <typename QFn, typename DerivedP>
typename DerivedP::Scalar counterfactual_advantage(QFn&& q, const Eigen::VectorXi& joint_action,
                                                   const Eigen::DenseBase<DerivedP>& policy,
                                                   Eigen::Index agent) {
  using Scalar = typename DerivedP::Scalar;
  if (policy.size() != 2) throw ShapeError("counterfactual_advantage: policy needs 2 entries");
  if (agent < 0 || agent >= joint_action.size())
    throw ShapeError("counterfactual_advantage: agent index out of range");
  const Scalar taken = q(joint_action);
  Eigen::VectorXi alt = joint_action;
  Scalar baseline = 0;
  for (int a = 0; a < 2; ++a) {
    const Scalar p = policy(a);
    if (p == 0) continue;
    alt(agent) = a;
    baseline += p * (a == joint_action(agent) ? taken : q(alt));
  }
  return taken - baseline;
}

}  // namespace ranpool::dups
