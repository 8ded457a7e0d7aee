#include "ranpool/ccl.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "ranpool/io.hpp"

namespace ranpool::ccl {

PartnerMode parse_partner_mode(const std::string& s) {
  if (s == "none") return PartnerMode::kNone;
  if (s == "all") return PartnerMode::kAll;
  if (s == "negative" || s == "cross") return PartnerMode::kNegative;
  if (s == "threshold") return PartnerMode::kThreshold;
  throw ConfigError("unknown partner mode '" + s + "'");
}

std::string to_string(PartnerMode m) {
  switch (m) {
    case PartnerMode::kNone: return "none";
    case PartnerMode::kAll: return "all";
    case PartnerMode::kNegative: return "negative";
    case PartnerMode::kThreshold: return "threshold";
  }
  return "none";
}

void CollabPolicy::validate() const {
  if (!(omega > 0.0) || omega > 1.0) throw ConfigError("collab policy: omega must be in (0, 1]");
  if (max_epochs < 0) throw ConfigError("collab policy: max_epochs must be >= 0");
}

std::vector<std::vector<int>> select_partners(const Eigen::MatrixXd& corr,
                                              const CollabPolicy& policy) {
  const auto n = static_cast<int>(corr.rows());
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double r = corr(i, j);
      bool take = false;
      switch (policy.mode) {
        case PartnerMode::kNone: break;
        case PartnerMode::kAll: take = true; break;
        case PartnerMode::kNegative: take = r <= policy.negative_cutoff; break;
        case PartnerMode::kThreshold: take = r >= policy.psi; break;
      }
      if (take) out[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  return out;
}

bool collab_ready(const ClusterModel& model, double omega, int max_epochs) {
  if (2 * model.epoch > max_epochs) return true;
  if (model.evaluations < 2) return false;
  if (model.v_prev == 0.0) return true;
  return std::abs(model.v - model.v_prev) / model.v_prev <= omega;
}

nn::ModelParams merge_params(
    const nn::ModelParams& owner, std::size_t owner_size,
    const std::vector<std::pair<const nn::ModelParams*, std::size_t>>& partners,
    nn::ParamScope scope) {
  if (partners.empty()) return owner;
  if (owner_size == 0) throw ConfigError("collab_merge: owner cluster has no stations");
  for (const auto& [p, size] : partners) owner.require_congruent(*p, "collab_merge");

  nn::ModelParams out = owner;
  const double denom = static_cast<double>(partners.size() + 1);
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (!nn::in_scope(out.tensor(t).partition, scope)) continue;
    nn::Tensor acc = owner[t];
    for (const auto& [p, size] : partners) {
      const double alpha = static_cast<double>(size) / static_cast<double>(owner_size);
      acc += alpha * (*p)[t];
    }
    out[t] = acc / denom;
  }
  return out;
}

nn::ModelParams collab_merge(const ClusterModel& owner,
                             const std::vector<const ClusterModel*>& partners,
                             nn::ParamScope scope) {
  std::vector<std::pair<const nn::ModelParams*, std::size_t>> raw;
  raw.reserve(partners.size());
  for (const auto* p : partners) raw.emplace_back(&p->params, p->stations);
  return merge_params(owner.params, owner.stations, raw, scope);
}

void collab_round(std::vector<ClusterModel>& clusters, const std::vector<bool>& eligible,
                  const std::vector<int>& order, nn::ParamScope scope) {
  const std::vector<ClusterModel> snapshot = clusters;
  for (int i : order) {
    auto& c = clusters.at(static_cast<std::size_t>(i));
    if (!eligible.at(static_cast<std::size_t>(i)) || c.collab.empty()) continue;
    std::vector<const ClusterModel*> partners;
    for (int j : c.collab) partners.push_back(&snapshot.at(static_cast<std::size_t>(j)));
    c.params = collab_merge(snapshot[static_cast<std::size_t>(i)], partners, scope);
  }
}

// --- config ---------------------------------------------------------------------

RegimeConfig regime_config_from_json(const std::string& json_text) {
  RegimeConfig c;
  try {
    const auto j = nlohmann::json::parse(json_text);
    if (j.contains("net")) c.net = nn::mstnet_config_from_json(j.at("net").dump());
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      c.policy.mode = parse_partner_mode(p.value("partner_mode", to_string(c.policy.mode)));
      c.policy.psi = p.value("psi", c.policy.psi);
      c.policy.omega = p.value("omega", c.policy.omega);
      c.policy.scope = nn::parse_scope(p.value("scope", std::string(nn::to_string(c.policy.scope))));
      c.policy.max_epochs = p.value("max_epochs", c.policy.max_epochs);
      c.policy.negative_cutoff = p.value("negative_cutoff", c.policy.negative_cutoff);
    }
    c.fl_round = j.value("fl_round", c.fl_round);
    c.pfl_finetune = j.value("pfl_finetune", c.pfl_finetune);
    c.fl_size_weighted = j.value("fl_size_weighted", c.fl_size_weighted);
    c.ciil_order = j.value("ciil_order", c.ciil_order);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("regime config: ") + e.what());
  }
  c.policy.validate();
  if (c.fl_round < 1) throw ConfigError("regime config: fl_round must be >= 1");
  if (c.pfl_finetune < 0) throw ConfigError("regime config: pfl_finetune must be >= 0");
  return c;
}

std::string to_json(const RegimeConfig& c) {
  nlohmann::json j;
  j["net"] = nlohmann::json::parse(nn::to_json(c.net));
  j["policy"] = {{"partner_mode", to_string(c.policy.mode)},
                 {"psi", c.policy.psi},
                 {"omega", c.policy.omega},
                 {"scope", std::string(nn::to_string(c.policy.scope))},
                 {"max_epochs", c.policy.max_epochs},
                 {"negative_cutoff", c.policy.negative_cutoff}};
  j["fl_round"] = c.fl_round;
  j["pfl_finetune"] = c.pfl_finetune;
  j["fl_size_weighted"] = c.fl_size_weighted;
  j["ciil_order"] = c.ciil_order;
  return j.dump();
}

// --- threading ------------------------------------------------------------------

int worker_threads() {
  if (const char* env = std::getenv("RANPOOL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex m;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i;
          {
            std::lock_guard lock(m);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// --- shared pieces --------------------------------------------------------------

nn::Standardizer shared_standardizer(const std::vector<ClusterModel>& clusters) {
  std::vector<const data::SequenceSample*> all;
  for (const auto& c : clusters)
    for (const auto& s : c.split.train) all.push_back(&s);
  return nn::Standardizer::fit(all);
}

nn::ModelParams initial_params(const nn::MstNetConfig& config, std::uint64_t seed) {
  nn::Model m(config, splitmix64(seed ^ fnv1a64("model-init")));
  return m.params;
}

std::vector<ClusterModel> make_clusters(const std::vector<data::BaseStation>& stations,
                                        const clustering::ClusteringReport& report, int q,
                                        std::uint64_t seed) {
  std::map<StationId, const data::BaseStation*> by_id;
  for (const auto& b : stations) by_id[b.id] = &b;
  std::vector<ClusterModel> out;
  for (std::size_t i = 0; i < report.logical.size(); ++i) {
    const auto& l = report.logical[i];
    std::vector<data::BaseStation> members;
    for (auto id : l.members) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("make_clusters: unknown station " + std::to_string(id));
      members.push_back(*it->second);
    }
    ClusterModel c;
    c.id = static_cast<int>(i);
    c.name = l.name();
    c.stations = members.size();
    c.profile = l.profile;
    c.split = data::windowize(members, q, splitmix64(seed ^ fnv1a64("split")) + i);
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

Rng cluster_rng(std::uint64_t seed, int id) {
  return derive_rng(seed, "cluster-train", static_cast<std::uint64_t>(id));
}

struct Trainer {
  const RegimeConfig& config;
  nn::Model prototype;
  nn::Standardizer standardizer;
  std::string regime;

  Trainer(const RegimeConfig& c, nn::Standardizer st, std::string name)
      : config(c), prototype(c.net, 0), standardizer(std::move(st)), regime(std::move(name)) {}

  const nn::MstNet& net() const { return prototype.net; }

  /// One local epoch on `c`, with validation bookkeeping and curve logging.
  void epoch(ClusterModel& c, Rng& rng, std::vector<CurvePoint>& curve) const {
    try {
      auto r = nn::train_epoch(net(), std::move(c.params), c.split.train, standardizer, rng);
      c.params = std::move(r.params);
      ++c.epoch;
      c.v_prev = c.v;
      c.v = nn::validation_loss(net(), c.params, c.split.validation, standardizer);
      ++c.evaluations;
      curve.push_back({regime, c.id, c.epoch, r.loss, c.v});
    } catch (const NumericalError& e) {
      throw NumericalError(regime + " cluster " + c.name + " epoch " +
                           std::to_string(c.epoch + 1) + ": " + e.what());
    }
  }
};

void require_clusters(const std::vector<ClusterModel>& clusters) {
  if (clusters.empty()) throw ConfigError("no clusters to train");
  for (const auto& c : clusters)
    if (c.split.train.empty() || c.split.validation.empty() || c.split.test.empty())
      throw ConfigError("cluster " + c.name + " has an empty train/validation/test split");
}

void init_all(std::vector<ClusterModel>& clusters, const nn::MstNetConfig& net, std::uint64_t seed) {
  const auto init = initial_params(net, seed);
  for (auto& c : clusters) {
    c.params = init;
    c.epoch = 0;
    c.v = c.v_prev = 0.0;
    c.evaluations = 0;
  }
}

void merge_curves(std::vector<CurvePoint>& into, std::vector<std::vector<CurvePoint>>& parts) {
  for (auto& p : parts) into.insert(into.end(), p.begin(), p.end());
}

RegimeResult finish(const std::string& regime, const std::vector<ClusterModel>& clusters,
                    std::vector<nn::ModelParams> params, const Trainer& t,
                    std::vector<CurvePoint> curves) {
  RegimeResult r;
  r.regime = regime;
  r.mae = evaluate(regime, clusters, params, t.config.net, t.standardizer);
  r.params = std::move(params);
  r.curves = std::move(curves);
  r.standardizer = t.standardizer;
  return r;
}

std::vector<nn::ModelParams> params_of(const std::vector<ClusterModel>& clusters) {
  std::vector<nn::ModelParams> out;
  for (const auto& c : clusters) out.push_back(c.params);
  return out;
}

/// Uniform (or size-weighted) average of every cluster's full parameters.
nn::ModelParams federated_average(const std::vector<ClusterModel>& clusters, bool weighted) {
  double total = 0.0;
  for (const auto& c : clusters) total += weighted ? static_cast<double>(c.stations) : 1.0;
  const auto weight = [&](const ClusterModel& c) {
    return (weighted ? static_cast<double>(c.stations) : 1.0) / total;
  };
  nn::ModelParams avg = clusters.front().params;
  avg.scale(weight(clusters.front()));
  for (std::size_t i = 1; i < clusters.size(); ++i) avg.axpy(weight(clusters[i]), clusters[i].params);
  return avg;
}

/// FL phase shared by run_fl and run_pfl; trains `epochs` epochs with averaging
/// every fl_round epochs and once more at the end.
void federated_phase(std::vector<ClusterModel>& clusters, std::vector<Rng>& rngs, const Trainer& t,
                     int epochs, std::vector<CurvePoint>& curves) {
  std::vector<std::vector<CurvePoint>> parts(clusters.size());
  for (int e = 1; e <= epochs; ++e) {
    parallel_for(clusters.size(), [&](std::size_t i) { t.epoch(clusters[i], rngs[i], parts[i]); });
    if (e % t.config.fl_round == 0 || e == epochs) {
      const auto avg = federated_average(clusters, t.config.fl_size_weighted);
      for (auto& c : clusters) c.params = avg;
    }
  }
  merge_curves(curves, parts);
}

}  // namespace

std::vector<MaeRow> evaluate(const std::string& regime, const std::vector<ClusterModel>& clusters,
                             const std::vector<nn::ModelParams>& params,
                             const nn::MstNetConfig& net, const nn::Standardizer& standardizer) {
  if (params.size() != clusters.size()) throw ShapeError("evaluate: one parameter set per cluster");
  nn::Model proto(net, 0);
  std::vector<MaeRow> rows;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    proto.params.require_congruent(params[i], "evaluate");
    const auto m = nn::test_mae(proto.net, params[i], clusters[i].split.test, standardizer);
    rows.push_back({regime, clusters[i].id, clusters[i].name, net.q, m.traffic_gb, m.users});
  }
  return rows;
}

RegimeResult run_ccl(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                     std::uint64_t seed) {
  require_clusters(clusters);
  config.policy.validate();
  const int T = config.epochs();
  Trainer t(config, shared_standardizer(clusters), "ccl");
  init_all(clusters, config.net, seed);

  Eigen::MatrixXd profiles(clusters.front().profile.size(), static_cast<Eigen::Index>(clusters.size()));
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i].profile.size() != profiles.rows())
      throw ShapeError("run_ccl: cluster profiles differ in length");
    profiles.col(static_cast<Eigen::Index>(i)) = clusters[i].profile;
  }
  const auto partners = select_partners(clustering::pcc_matrix(profiles), config.policy);
  for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i].collab = partners[i];

  std::vector<Rng> rngs;
  for (const auto& c : clusters) rngs.push_back(cluster_rng(seed, c.id));
  std::vector<std::vector<CurvePoint>> parts(clusters.size());
  std::vector<int> order(clusters.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  int rounds = 0;
  const auto active = [&] {
    return std::any_of(clusters.begin(), clusters.end(), [&](const auto& c) { return c.epoch < T; });
  };
  while (active()) {
    parallel_for(clusters.size(), [&](std::size_t i) {
      auto& c = clusters[i];
      while (c.epoch < T) {
        t.epoch(c, rngs[i], parts[i]);
        if (collab_ready(c, config.policy.omega, T)) break;
      }
    });
    // Barrier: clusters still owing epochs merge from everyone's snapshot.
    std::vector<bool> eligible(clusters.size());
    for (std::size_t i = 0; i < clusters.size(); ++i) eligible[i] = clusters[i].epoch < T;
    if (std::any_of(eligible.begin(), eligible.end(), [](bool b) { return b; })) {
      collab_round(clusters, eligible, order, config.policy.scope);
      ++rounds;
    }
  }

  std::vector<CurvePoint> curves;
  merge_curves(curves, parts);
  auto r = finish("ccl", clusters, params_of(clusters), t, std::move(curves));
  r.exchange_rounds = rounds;
  return r;
}

RegimeResult run_idel(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                      std::uint64_t seed) {
  require_clusters(clusters);
  const int T = config.epochs();
  Trainer t(config, shared_standardizer(clusters), "idel");
  init_all(clusters, config.net, seed);
  std::vector<std::vector<CurvePoint>> parts(clusters.size());
  parallel_for(clusters.size(), [&](std::size_t i) {
    Rng rng = cluster_rng(seed, clusters[i].id);
    while (clusters[i].epoch < T) t.epoch(clusters[i], rng, parts[i]);
  });
  std::vector<CurvePoint> curves;
  merge_curves(curves, parts);
  return finish("idel", clusters, params_of(clusters), t, std::move(curves));
}

RegimeResult run_fl(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                    std::uint64_t seed) {
  require_clusters(clusters);
  Trainer t(config, shared_standardizer(clusters), "fl");
  init_all(clusters, config.net, seed);
  std::vector<Rng> rngs;
  for (const auto& c : clusters) rngs.push_back(cluster_rng(seed, c.id));
  std::vector<CurvePoint> curves;
  federated_phase(clusters, rngs, t, config.epochs(), curves);
  return finish("fl", clusters, params_of(clusters), t, std::move(curves));
}

RegimeResult run_pfl(std::vector<ClusterModel> clusters, const RegimeConfig& config,
                     std::uint64_t seed) {
  require_clusters(clusters);
  Trainer t(config, shared_standardizer(clusters), "pfl");
  init_all(clusters, config.net, seed);
  std::vector<Rng> rngs;
  for (const auto& c : clusters) rngs.push_back(cluster_rng(seed, c.id));
  const int T = config.epochs();
  const int local = std::min(config.pfl_finetune, T);
  std::vector<CurvePoint> curves;
  federated_phase(clusters, rngs, t, T - local, curves);
  std::vector<std::vector<CurvePoint>> parts(clusters.size());
  parallel_for(clusters.size(), [&](std::size_t i) {
    while (clusters[i].epoch < T) t.epoch(clusters[i], rngs[i], parts[i]);
  });
  merge_curves(curves, parts);
  return finish("pfl", clusters, params_of(clusters), t, std::move(curves));
}

RegimeResult run_gl(const std::vector<ClusterModel>& clusters, const RegimeConfig& config,
                    std::uint64_t seed) {
  require_clusters(clusters);
  Trainer t(config, shared_standardizer(clusters), "gl");
  ClusterModel pooled;
  pooled.id = -1;
  pooled.name = "global";
  for (const auto& c : clusters) {
    pooled.stations += c.stations;
    pooled.split.train.insert(pooled.split.train.end(), c.split.train.begin(), c.split.train.end());
    pooled.split.validation.insert(pooled.split.validation.end(), c.split.validation.begin(),
                                   c.split.validation.end());
  }
  pooled.params = initial_params(config.net, seed);
  Rng rng = derive_rng(seed, "gl");
  std::vector<CurvePoint> curves;
  while (pooled.epoch < config.epochs()) t.epoch(pooled, rng, curves);
  return finish("gl", clusters, std::vector<nn::ModelParams>(clusters.size(), pooled.params), t,
                std::move(curves));
}

RegimeResult run_ciil(const std::vector<ClusterModel>& clusters, const RegimeConfig& config,
                      std::uint64_t seed) {
  require_clusters(clusters);
  Trainer t(config, shared_standardizer(clusters), "ciil");
  std::vector<int> order = config.ciil_order;
  if (order.empty())
    for (std::size_t i = 0; i < clusters.size(); ++i) order.push_back(static_cast<int>(i));
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted.size() != clusters.size() || sorted[i] != static_cast<int>(i))
        throw ConfigError("ciil_order must be a permutation of the cluster indices");
  }
  const int per = std::max(1, config.epochs() / static_cast<int>(clusters.size()));
  nn::ModelParams params = initial_params(config.net, seed);
  Rng rng = derive_rng(seed, "ciil");
  std::vector<CurvePoint> curves;
  for (int i : order) {
    ClusterModel c = clusters[static_cast<std::size_t>(i)];
    c.params = std::move(params);
    c.epoch = 0;
    for (int e = 0; e < per; ++e) t.epoch(c, rng, curves);
    params = std::move(c.params);
  }
  return finish("ciil", clusters, std::vector<nn::ModelParams>(clusters.size(), params), t,
                std::move(curves));
}

RegimeResult run_regime(const std::string& regime, const std::vector<ClusterModel>& clusters,
                        const RegimeConfig& config, std::uint64_t seed) {
  if (regime == "ccl") return run_ccl(clusters, config, seed);
  if (regime == "idel") return run_idel(clusters, config, seed);
  if (regime == "gl") return run_gl(clusters, config, seed);
  if (regime == "fl") return run_fl(clusters, config, seed);
  if (regime == "pfl") return run_pfl(clusters, config, seed);
  if (regime == "ciil") return run_ciil(clusters, config, seed);
  throw ConfigError("unknown regime '" + regime + "'");
}

std::string mae_csv(const std::vector<MaeRow>& rows) {
  io::CsvWriter w({"regime", "cluster_id", "cluster", "q", "mae_traffic_gb", "mae_users"});
  for (const auto& r : rows)
    w.row({r.regime, std::to_string(r.cluster_id), r.cluster, std::to_string(r.q),
           io::fmt(r.mae_traffic_gb), io::fmt(r.mae_users)});
  return w.str();
}

std::string curves_csv(const std::vector<CurvePoint>& rows) {
  io::CsvWriter w({"regime", "cluster_id", "epoch", "train_loss", "val_loss"});
  for (const auto& r : rows)
    w.row({r.regime, std::to_string(r.cluster_id), std::to_string(r.epoch), io::fmt(r.train_loss),
           io::fmt(r.val_loss)});
  return w.str();
}

}  // namespace ranpool::ccl
