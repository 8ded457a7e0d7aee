#include "ranpool/nn/mstnet.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>

namespace ranpool::nn {

void MstNetConfig::validate() const {
  const auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("mstnet: ") + name + " must be >= 1");
  };
  positive(q, "q");
  positive(features, "features");
  positive(conv_channels, "conv_channels");
  positive(kernel_size, "kernel_size");
  positive(tcn_layers, "tcn_layers");
  positive(trunk_hidden, "trunk_hidden");
  positive(traffic_hidden, "traffic_hidden");
  positive(users_hidden, "users_hidden");
  positive(batch_size, "batch_size");
  if (epochs < 0) throw ConfigError("mstnet: epochs must be >= 0");
  if (branch_lstm.empty()) throw ConfigError("mstnet: branch_lstm needs at least one layer");
  for (int s : branch_lstm) positive(s, "branch_lstm size");
  if (conv_channels < 2) throw ConfigError("mstnet: conv_channels must be >= 2 for layer norm");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("mstnet: dropout must be in [0, 1)");
  if (learning_rate < 0.0) throw ConfigError("mstnet: negative learning rate");
}

MstNetConfig mstnet_config_from_json(const std::string& json_text) {
  MstNetConfig c;
  try {
    const auto j = nlohmann::json::parse(json_text);
    c.q = j.value("q", c.q);
    c.features = j.value("features", c.features);
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.tcn_layers = j.value("tcn_layers", c.tcn_layers);
    c.trunk_hidden = j.value("trunk_hidden", c.trunk_hidden);
    c.branch_lstm = j.value("branch_lstm", c.branch_lstm);
    c.traffic_hidden = j.value("traffic_hidden", c.traffic_hidden);
    c.users_hidden = j.value("users_hidden", c.users_hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.alternating = j.value("alternating", c.alternating);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mstnet config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const MstNetConfig& c) {
  nlohmann::json j{{"q", c.q},
                   {"features", c.features},
                   {"conv_channels", c.conv_channels},
                   {"kernel_size", c.kernel_size},
                   {"tcn_layers", c.tcn_layers},
                   {"trunk_hidden", c.trunk_hidden},
                   {"branch_lstm", c.branch_lstm},
                   {"traffic_hidden", c.traffic_hidden},
                   {"users_hidden", c.users_hidden},
                   {"dropout", c.dropout},
                   {"learning_rate", c.learning_rate},
                   {"batch_size", c.batch_size},
                   {"epochs", c.epochs},
                   {"alternating", c.alternating}};
  return j.dump();
}

Standardizer Standardizer::fit(const std::vector<const data::SequenceSample*>& samples) {
  Standardizer s;
  if (samples.empty()) return s;
  Eigen::Array3d sum = Eigen::Array3d::Zero();
  Eigen::Array3d sq = Eigen::Array3d::Zero();
  double rows = 0.0;
  for (const auto* sample : samples) {
    for (Eigen::Index r = 0; r < sample->inputs.rows(); ++r) {
      const Eigen::Array3d v = sample->inputs.row(r).transpose().array();
      sum += v;
      sq += v.square();
      rows += 1.0;
    }
  }
  s.mean = sum / rows;
  const Eigen::Array3d var = (sq / rows - s.mean.square()).max(0.0);
  s.scale = var.sqrt();
  for (int i = 0; i < 3; ++i)
    if (!(s.scale(i) > 1e-12)) s.scale(i) = 1.0;
  return s;
}

Standardizer Standardizer::fit(const std::vector<data::SequenceSample>& samples) {
  std::vector<const data::SequenceSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return fit(ptrs);
}

Batch make_batch(const std::vector<data::SequenceSample>& samples,
                 const std::vector<std::size_t>& indices, const Standardizer& st) {
  Batch b;
  if (indices.empty()) return b;
  const auto n = static_cast<Eigen::Index>(indices.size());
  const Eigen::Index q = samples[indices.front()].inputs.rows();
  const Eigen::Index f = samples[indices.front()].inputs.cols();
  b.inputs.assign(static_cast<std::size_t>(q), Eigen::MatrixXd(n, f));
  b.traffic.resize(n);
  b.users.resize(n);
  const Eigen::RowVectorXd mean = st.mean.matrix().transpose().head(f);
  const Eigen::RowVectorXd inv = st.scale.inverse().matrix().transpose().head(f);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& s = samples[indices[static_cast<std::size_t>(r)]];
    if (s.inputs.rows() != q || s.inputs.cols() != f) throw ShapeError("make_batch: ragged windows");
    for (Eigen::Index t = 0; t < q; ++t)
      b.inputs[static_cast<std::size_t>(t)].row(r) =
          (s.inputs.row(t) - mean).cwiseProduct(inv);
    b.traffic(r) = (s.target_traffic - st.mean(0)) / st.scale(0);
    b.users(r) = (s.target_users - st.mean(1)) / st.scale(1);
  }
  return b;
}

Batch make_batch(const std::vector<data::SequenceSample>& samples, const Standardizer& st) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(samples, idx, st);
}

// --- MstNet --------------------------------------------------------------------

MstNet::MstNet(const MstNetConfig& config, ModelParams& params, std::uint64_t init_seed)
    : config_(config) {
  config_.validate();
  Rng rng = derive_rng(init_seed, "mstnet-init");
  const Eigen::Index c = config_.conv_channels;
  Eigen::Index in = config_.features;
  for (int l = 0; l < config_.tcn_layers; ++l) {
    const std::string name = "tcn" + std::to_string(l);
    TcnLayer layer;
    layer.conv = CausalConv1d::create(params, name + ".conv", Partition::kShared, in, c,
                                      config_.kernel_size, config_.dilation(l), rng);
    layer.norm = LayerNorm::create(params, name + ".norm", Partition::kShared, c);
    layer.projected = in != c;
    if (layer.projected)
      layer.projection =
          Dense::create(params, name + ".residual", Partition::kShared, in, c, rng, false);
    tcn_.push_back(layer);
    in = c;
  }
  trunk_ = Lstm::create(params, "trunk.lstm", Partition::kShared, c, config_.trunk_hidden, rng);
  trunk_projected_ = c != config_.trunk_hidden;
  if (trunk_projected_)
    trunk_projection_ = Dense::create(params, "trunk.residual", Partition::kShared, c,
                                      config_.trunk_hidden, rng, false);

  const auto make_branch = [&](const std::string& name, Partition part, int hidden) {
    Branch b;
    b.name = name;
    Eigen::Index width = config_.trunk_hidden;
    for (std::size_t l = 0; l < config_.branch_lstm.size(); ++l) {
      b.lstm.push_back(Lstm::create(params, name + ".lstm" + std::to_string(l), part, width,
                                    config_.branch_lstm[l], rng));
      width = config_.branch_lstm[l];
    }
    b.hidden = Dense::create(params, name + ".hidden", part, width, hidden, rng);
    b.output = Dense::create(params, name + ".output", part, hidden, 1, rng);
    return b;
  };
  traffic_ = make_branch("traffic", Partition::kTraffic, config_.traffic_hidden);
  users_ = make_branch("users", Partition::kUsers, config_.users_hidden);
}

Eigen::MatrixXd MstNet::forward_branch(const ModelParams& p, const Branch& b, const Sequence& trunk,
                                       BranchCache& cache) const {
  cache.lstm_inputs.clear();
  cache.lstm.assign(b.lstm.size(), {});
  Sequence seq = trunk;
  for (std::size_t l = 0; l < b.lstm.size(); ++l) {
    cache.lstm_inputs.push_back(seq);
    seq = b.lstm[l].forward(p, seq, cache.lstm[l]);
    check_finite(seq, b.name + ".lstm" + std::to_string(l));
  }
  cache.last = seq.back();
  cache.hidden_pre = b.hidden.forward(p, cache.last);
  cache.hidden = relu(cache.hidden_pre);
  Eigen::MatrixXd y = b.output.forward(p, cache.hidden);
  check_finite(y, b.name + ".output");
  return y;
}

MstNet::Output MstNet::forward(const ModelParams& p, const Sequence& x, Cache& cache,
                               Rng* dropout_rng) const {
  if (static_cast<int>(x.size()) < 1) throw ShapeError("mstnet: empty input sequence");
  if (x.front().cols() != config_.features) throw ShapeError("mstnet: feature count mismatch");
  cache.tcn.assign(tcn_.size(), {});
  Sequence h = x;
  for (std::size_t l = 0; l < tcn_.size(); ++l) {
    const auto& layer = tcn_[l];
    auto& tc = cache.tcn[l];
    const std::string name = "tcn" + std::to_string(l);
    tc.input = h;
    tc.conv = layer.conv.forward(p, h);
    check_finite(tc.conv, name + ".conv");
    tc.normed = layer.norm.forward(p, tc.conv, tc.norm);
    check_finite(tc.normed, name + ".norm");
    tc.skip = layer.projected ? layer.projection.forward(p, h) : h;
    Sequence act = relu(tc.normed);
    for (std::size_t t = 0; t < act.size(); ++t) act[t] += tc.skip[t];
    h = std::move(act);
  }
  cache.tcn_out = h;

  cache.dropout = (dropout_rng && config_.dropout > 0.0)
                      ? make_dropout_mask(cache.tcn_out, config_.dropout, *dropout_rng)
                      : DropoutMask{};
  cache.trunk_in = apply_mask(cache.dropout, cache.tcn_out);
  cache.trunk_out = trunk_.forward(p, cache.trunk_in, cache.trunk_lstm);
  check_finite(cache.trunk_out, "trunk.lstm");
  const Sequence skip =
      trunk_projected_ ? trunk_projection_.forward(p, cache.tcn_out) : cache.tcn_out;
  for (std::size_t t = 0; t < skip.size(); ++t) cache.trunk_out[t] += skip[t];

  Output out;
  out.traffic = forward_branch(p, traffic_, cache.trunk_out, cache.traffic).col(0);
  out.users = forward_branch(p, users_, cache.trunk_out, cache.users).col(0);
  return out;
}

MstNet::Output MstNet::forward(const ModelParams& p, const Sequence& x) const {
  Cache cache;
  return forward(p, x, cache, nullptr);
}

Sequence MstNet::backward_branch(const ModelParams& p, const Branch& b, const BranchCache& cache,
                                 const Eigen::MatrixXd& dy, std::size_t steps,
                                 ModelParams& grads) const {
  const Eigen::MatrixXd d_hidden = b.output.backward(p, cache.hidden, dy, grads);
  const Eigen::MatrixXd d_pre = relu_backward(cache.hidden_pre, d_hidden);
  const Eigen::MatrixXd d_last = b.hidden.backward(p, cache.last, d_pre, grads);
  Sequence dseq(steps, Eigen::MatrixXd::Zero(d_last.rows(), d_last.cols()));
  dseq.back() = d_last;
  for (std::size_t l = b.lstm.size(); l-- > 0;)
    dseq = b.lstm[l].backward(p, cache.lstm_inputs[l], cache.lstm[l], dseq, grads);
  return dseq;
}

ModelParams MstNet::backward(const ModelParams& p, const Cache& cache,
                             const Eigen::VectorXd& d_traffic, const Eigen::VectorXd& d_users) const {
  return backward(p, cache, d_traffic, d_users, nullptr);
}

ModelParams MstNet::backward(const ModelParams& p, const Cache& cache,
                             const Eigen::VectorXd& d_traffic, const Eigen::VectorXd& d_users,
                             Sequence* d_input) const {
  const std::size_t steps = cache.trunk_out.size();
  if (steps == 0) throw ShapeError("mstnet backward: empty cache");
  const Eigen::Index batch = cache.trunk_out.front().rows();
  if (d_traffic.size() != batch || d_users.size() != batch)
    throw ShapeError("mstnet backward: gradient batch size does not match the cache");

  ModelParams grads = p.zeros_like();
  Sequence d_trunk = backward_branch(p, traffic_, cache.traffic, d_traffic, steps, grads);
  const Sequence d_users_trunk = backward_branch(p, users_, cache.users, d_users, steps, grads);
  for (std::size_t t = 0; t < steps; ++t) d_trunk[t] += d_users_trunk[t];

  const Sequence d_trunk_in = trunk_.backward(p, cache.trunk_in, cache.trunk_lstm, d_trunk, grads);
  Sequence dh = apply_mask(cache.dropout, d_trunk_in);
  const Sequence d_skip = trunk_projected_
                              ? trunk_projection_.backward(p, cache.tcn_out, d_trunk, grads)
                              : d_trunk;
  for (std::size_t t = 0; t < steps; ++t) dh[t] += d_skip[t];

  for (std::size_t l = tcn_.size(); l-- > 0;) {
    const auto& layer = tcn_[l];
    const auto& tc = cache.tcn[l];
    const Sequence d_normed = relu_backward(tc.normed, dh);
    const Sequence d_conv = layer.norm.backward(p, tc.norm, d_normed, grads);
    Sequence d_in = layer.conv.backward(p, tc.input, d_conv, grads);
    const Sequence d_res = layer.projected ? layer.projection.backward(p, tc.input, dh, grads) : dh;
    for (std::size_t t = 0; t < steps; ++t) d_in[t] += d_res[t];
    dh = std::move(d_in);
  }
  if (d_input) *d_input = std::move(dh);
  return grads;
}

Model::Model(const MstNetConfig& c, std::uint64_t init_seed)
    : config(c), params(), net(c, params, init_seed) {}

// --- training ------------------------------------------------------------------

namespace {

Eigen::VectorXd mae_grad(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  const double n = static_cast<double>(pred.size());
  return (pred - truth).unaryExpr([n](double d) { return d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0); });
}

constexpr std::size_t kEvalBatch = 512;

template <typename Fn>
void for_each_chunk(std::size_t n, Fn&& fn) {
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    std::vector<std::size_t> idx(std::min(kEvalBatch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    fn(start, idx);
  }
}

}  // namespace

EpochResult train_epoch(const MstNet& net, ModelParams params,
                        const std::vector<data::SequenceSample>& train,
                        const Standardizer& standardizer, Rng& rng) {
  if (train.empty()) throw ConfigError("train_epoch: empty training split");
  const auto& cfg = net.config();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  double total = 0.0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
    const Batch batch = make_batch(train, idx, standardizer);
    MstNet::Cache cache;
    const auto out = net.forward(params, batch.inputs, cache, &rng);

    const double lt = mae_loss(out.traffic, batch.traffic);
    const double lu = mae_loss(out.users, batch.users);
    const bool traffic_only = cfg.alternating && batch_index % 2 == 0;
    const bool users_only = cfg.alternating && batch_index % 2 == 1;
    const double loss = traffic_only ? lt : users_only ? lu : lt + lu;
    if (!std::isfinite(loss) || loss > kDivergenceLimit)
      throw NumericalError("train_epoch: training diverged (batch loss " + std::to_string(loss) + ")");

    Eigen::VectorXd dt = mae_grad(out.traffic, batch.traffic);
    Eigen::VectorXd du = mae_grad(out.users, batch.users);
    if (users_only) dt.setZero();
    if (traffic_only) du.setZero();
    const ModelParams grads = net.backward(params, cache, dt, du);
    if (!grads.all_finite()) throw NumericalError("train_epoch: non-finite gradient");
    if (cfg.learning_rate != 0.0) params.axpy(-cfg.learning_rate, grads);
    total += loss * static_cast<double>(idx.size());
  }
  return {std::move(params), total / static_cast<double>(train.size())};
}

double validation_loss(const MstNet& net, const ModelParams& params,
                       const std::vector<data::SequenceSample>& samples,
                       const Standardizer& standardizer) {
  if (samples.empty()) throw ConfigError("validation_loss: empty split");
  double abs_traffic = 0.0, abs_users = 0.0;
  for_each_chunk(samples.size(), [&](std::size_t, const std::vector<std::size_t>& idx) {
    const Batch b = make_batch(samples, idx, standardizer);
    const auto out = net.forward(params, b.inputs);
    abs_traffic += (out.traffic - b.traffic).cwiseAbs().sum();
    abs_users += (out.users - b.users).cwiseAbs().sum();
  });
  const double n = static_cast<double>(samples.size());
  return (abs_traffic / n + abs_users / n) / 2.0;
}

Predictions predict(const MstNet& net, const ModelParams& params,
                    const std::vector<data::SequenceSample>& samples,
                    const Standardizer& standardizer) {
  Predictions p;
  p.traffic.resize(static_cast<Eigen::Index>(samples.size()));
  p.users.resize(static_cast<Eigen::Index>(samples.size()));
  for_each_chunk(samples.size(), [&](std::size_t start, const std::vector<std::size_t>& idx) {
    const Batch b = make_batch(samples, idx, standardizer);
    const auto out = net.forward(params, b.inputs);
    const auto s = static_cast<Eigen::Index>(start);
    const auto n = static_cast<Eigen::Index>(idx.size());
    p.traffic.segment(s, n) = out.traffic.array() * standardizer.scale(0) + standardizer.mean(0);
    p.users.segment(s, n) = out.users.array() * standardizer.scale(1) + standardizer.mean(1);
  });
  return p;
}

TestMae test_mae(const MstNet& net, const ModelParams& params,
                 const std::vector<data::SequenceSample>& samples,
                 const Standardizer& standardizer) {
  if (samples.empty()) throw ConfigError("test_mae: empty split");
  const Predictions p = predict(net, params, samples, standardizer);
  Eigen::VectorXd traffic(p.traffic.size()), users(p.users.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    traffic(static_cast<Eigen::Index>(i)) = samples[i].target_traffic;
    users(static_cast<Eigen::Index>(i)) = samples[i].target_users;
  }
  return {mae_loss(p.traffic, traffic), mae_loss(p.users, users)};
}

}  // namespace ranpool::nn
