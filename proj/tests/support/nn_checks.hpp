#pragma once

#include <map>
#include <string>

#include "gradcheck.hpp"
#include "ranpool/nn/layers.hpp"
#include "ranpool/nn/mstnet.hpp"

namespace ranpool::testing {

// Each check packs layer parameters and the layer input into one parameter set,
// so a single probe loop covers both dL/dW and dL/dx. The objective is a fixed
// random projection of the output, which is smooth wherever the layer is.

namespace detail {

inline nn::Sequence random_sequence(int steps, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Sequence s(static_cast<std::size_t>(steps), Eigen::MatrixXd(rows, cols));
  for (auto& m : s)
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return s;
}

inline std::vector<std::size_t> add_inputs(nn::ModelParams& p, const nn::Sequence& x) {
  std::vector<std::size_t> ids;
  for (std::size_t t = 0; t < x.size(); ++t)
    ids.push_back(p.add("input." + std::to_string(t), nn::Partition::kOther, x[t]));
  return ids;
}

inline nn::Sequence read_inputs(const nn::ModelParams& p, const std::vector<std::size_t>& ids) {
  nn::Sequence x;
  for (auto id : ids) x.push_back(p[id]);
  return x;
}

inline double project(const nn::Sequence& y, const nn::Sequence& r) {
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) s += y[t].cwiseProduct(r[t]).sum();
  return s;
}

inline double run(const nn::ModelParams& p, const nn::ModelParams& grads,
                  const std::function<double(const nn::ModelParams&)>& loss, int probes,
                  std::uint64_t seed) {
  return max_rel_error(check_param_gradients(p, grads, loss, probes, seed));
}

}  // namespace detail

inline double dense_gradcheck(int probes, std::uint64_t seed) {
  Rng rng(seed);
  nn::ModelParams p;
  const auto layer = nn::Dense::create(p, "dense", nn::Partition::kOther, 5, 4, rng);
  const auto ids = detail::add_inputs(p, detail::random_sequence(1, 3, 5, rng));
  const auto r = detail::random_sequence(1, 3, 4, rng);
  const auto loss = [&](const nn::ModelParams& q) {
    return detail::project({layer.forward(q, q[ids[0]])}, r);
  };
  nn::ModelParams g = p.zeros_like();
  g[ids[0]] = layer.backward(p, p[ids[0]], r[0], g);
  return detail::run(p, g, loss, probes, seed + 1);
}

inline double conv_gradcheck(int probes, std::uint64_t seed) {
  Rng rng(seed);
  nn::ModelParams p;
  const auto layer = nn::CausalConv1d::create(p, "conv", nn::Partition::kOther, 3, 4, 3, 2, rng);
  const auto ids = detail::add_inputs(p, detail::random_sequence(6, 2, 3, rng));
  const auto r = detail::random_sequence(6, 2, 4, rng);
  const auto loss = [&](const nn::ModelParams& q) {
    return detail::project(layer.forward(q, detail::read_inputs(q, ids)), r);
  };
  nn::ModelParams g = p.zeros_like();
  const auto dx = layer.backward(p, detail::read_inputs(p, ids), r, g);
  for (std::size_t t = 0; t < ids.size(); ++t) g[ids[t]] = dx[t];
  return detail::run(p, g, loss, probes, seed + 1);
}

inline double layernorm_gradcheck(int probes, std::uint64_t seed) {
  Rng rng(seed);
  nn::ModelParams p;
  const auto layer = nn::LayerNorm::create(p, "norm", nn::Partition::kOther, 5);
  // Non-trivial gain and shift so their gradients are exercised away from 1 / 0.
  std::normal_distribution<double> n(0.0, 0.5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    p[layer.gain](i) += n(rng);
    p[layer.shift](i) += n(rng);
  }
  const auto ids = detail::add_inputs(p, detail::random_sequence(3, 4, 5, rng));
  const auto r = detail::random_sequence(3, 4, 5, rng);
  const auto loss = [&](const nn::ModelParams& q) {
    nn::LayerNorm::Cache c;
    return detail::project(layer.forward(q, detail::read_inputs(q, ids), c), r);
  };
  nn::ModelParams g = p.zeros_like();
  nn::LayerNorm::Cache c;
  layer.forward(p, detail::read_inputs(p, ids), c);
  const auto dx = layer.backward(p, c, r, g);
  for (std::size_t t = 0; t < ids.size(); ++t) g[ids[t]] = dx[t];
  return detail::run(p, g, loss, probes, seed + 1);
}

inline double lstm_gradcheck(int probes, std::uint64_t seed) {
  Rng rng(seed);
  nn::ModelParams p;
  const auto layer = nn::Lstm::create(p, "lstm", nn::Partition::kOther, 3, 4, rng);
  const auto ids = detail::add_inputs(p, detail::random_sequence(5, 2, 3, rng));
  const auto r = detail::random_sequence(5, 2, 4, rng);
  const auto loss = [&](const nn::ModelParams& q) {
    nn::Lstm::Cache c;
    return detail::project(layer.forward(q, detail::read_inputs(q, ids), c), r);
  };
  nn::ModelParams g = p.zeros_like();
  nn::Lstm::Cache c;
  const auto x = detail::read_inputs(p, ids);
  layer.forward(p, x, c);
  const auto dx = layer.backward(p, x, c, r, g);
  for (std::size_t t = 0; t < ids.size(); ++t) g[ids[t]] = dx[t];
  return detail::run(p, g, loss, probes, seed + 1);
}

/// ReLU and dropout carry no parameters; only dL/dx is probed. Inputs are kept
/// away from the ReLU kink so the finite difference stays on one side.
inline double relu_dropout_gradcheck(int probes, std::uint64_t seed) {
  Rng rng(seed);
  nn::ModelParams p;
  auto x = detail::random_sequence(4, 3, 5, rng);
  for (auto& m : x) m = m.unaryExpr([](double v) { return v >= 0 ? v + 0.1 : v - 0.1; });
  const auto ids = detail::add_inputs(p, x);
  const auto mask = nn::make_dropout_mask(x, 0.3, rng);
  const auto r = detail::random_sequence(4, 3, 5, rng);
  const auto loss = [&](const nn::ModelParams& q) {
    return detail::project(nn::apply_mask(mask, nn::relu(detail::read_inputs(q, ids))), r);
  };
  nn::ModelParams g = p.zeros_like();
  const auto dx = nn::relu_backward(x, nn::apply_mask(mask, r));
  for (std::size_t t = 0; t < ids.size(); ++t) g[ids[t]] = dx[t];
  return detail::run(p, g, loss, probes, seed + 1);
}

/// Small MSTNet that still exercises projections on both residual paths.
inline nn::MstNetConfig toy_mstnet_config() {
  nn::MstNetConfig c;
  c.q = 5;
  c.conv_channels = 4;
  c.kernel_size = 2;
  c.tcn_layers = 2;
  c.trunk_hidden = 6;
  c.branch_lstm = {5, 3};
  c.traffic_hidden = 4;
  c.users_hidden = 3;
  c.dropout = 0.25;
  return c;
}

/// Composed network with a fixed dropout mask, smooth projection objective on
/// both heads, probing parameters and inputs.
inline double mstnet_gradcheck(int probes, std::uint64_t seed) {
  const auto cfg = toy_mstnet_config();
  nn::Model model(cfg, seed);
  Rng rng(seed + 7);
  const auto x = detail::random_sequence(cfg.q, 3, cfg.features, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd rt(3), ru(3);
  for (int i = 0; i < 3; ++i) {
    rt(i) = n(rng);
    ru(i) = n(rng);
  }
  // Freeze one dropout draw: the mask depends only on the rng state at forward time.
  const Rng mask_rng = rng;

  nn::ModelParams p = model.params;
  const auto ids = detail::add_inputs(p, x);
  const std::size_t net_tensors = model.params.size();
  const auto split = [&](const nn::ModelParams& q) {
    nn::ModelParams net = model.params;
    for (std::size_t i = 0; i < net_tensors; ++i) net[i] = q[i];
    return net;
  };
  const auto loss = [&](const nn::ModelParams& q) {
    nn::MstNet::Cache c;
    Rng r = mask_rng;
    const auto out = model.net.forward(split(q), detail::read_inputs(q, ids), c, &r);
    return out.traffic.dot(rt) + out.users.dot(ru);
  };

  nn::MstNet::Cache c;
  Rng r = mask_rng;
  model.net.forward(model.params, x, c, &r);
  nn::Sequence dx;
  const auto gnet = model.net.backward(model.params, c, rt, ru, &dx);
  nn::ModelParams g = p.zeros_like();
  for (std::size_t i = 0; i < net_tensors; ++i) g[i] = gnet[i];
  for (std::size_t t = 0; t < ids.size(); ++t) g[ids[t]] = dx[t];
  return detail::run(p, g, loss, probes, seed + 1);
}

/// Every check, by name, at the given probe count.
inline std::map<std::string, double> all_gradchecks(int probes, std::uint64_t seed) {
  return {{"dense", dense_gradcheck(probes, seed)},
          {"causal_conv", conv_gradcheck(probes, seed)},
          {"layer_norm", layernorm_gradcheck(probes, seed)},
          {"lstm", lstm_gradcheck(probes, seed)},
          {"relu_dropout", relu_dropout_gradcheck(probes, seed)},
          {"mstnet", mstnet_gradcheck(probes, seed)}};
}

}  // namespace ranpool::testing
