#include "ranpool/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "ranpool/io.hpp"
#include "ranpool/report.hpp"

namespace ranpool::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration ----------------------------------------------------------------

RunConfig default_run_config() {
  RunConfig c;
  c.synth.stations = 24;
  c.synth.days = 14;
  c.synth.groups = {{9, 30.0, 300.0}, {19, 40.0, 400.0}};
  c.synth.noise_frac = 0.05;
  c.synth.spatial_clusters = 3;
  c.synth.spread_km = 0.8;
  c.synth.amplitude_jitter = 0.1;
  c.regime.net.epochs = 30;
  return c;
}

namespace {

json synth_json(const data::SynthConfig& s) {
  json groups = json::array();
  for (const auto& g : s.groups)
    groups.push_back({{"peak_hour", g.peak_hour}, {"mean_gb", g.mean_gb}, {"mean_users", g.mean_users}});
  return {{"stations", s.stations},
          {"days", s.days},
          {"groups", groups},
          {"noise_frac", s.noise_frac},
          {"bbox_km", s.bbox_km},
          {"spatial_clusters", s.spatial_clusters},
          {"spread_km", s.spread_km},
          {"amplitude_jitter", s.amplitude_jitter},
          {"peak_width_h", s.peak_width_h},
          {"base_level", s.base_level}};
}

template <class T>
void read_if(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text, std::uint64_t* seed_out) {
  RunConfig c = default_run_config();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("run config: top level must be an object");
  try {
    if (seed_out && j.contains("seed")) *seed_out = j.at("seed").get<std::uint64_t>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("synth")) {
        // Unspecified synthesis fields keep the run defaults.
        json merged = synth_json(c.synth);
        merged.update(d.at("synth"));
        c.synth = data::synth_config_from_json(merged.dump());
      }
      read_if(d, "input", c.input);
      read_if(d, "scale_to_5g", c.scale_to_5g);
      read_if(d, "capacity_gbps", c.capacity_gbps);
    }
    if (j.contains("clustering")) {
      const auto& k = j.at("clustering");
      read_if(k, "k_max", c.clustering.k_max);
      read_if(k, "k", c.clustering.k);
      read_if(k, "m", c.clustering.m);
      read_if(k, "psi", c.clustering.psi);
    }
    if (j.contains("train")) {
      json t = j.at("train");
      read_if(t, "regimes", c.regimes);
      read_if(t, "forecast_hours", c.forecast_hours);
      json regime = json::parse(ccl::to_json(c.regime));
      for (const auto& [key, value] : t.items()) {
        if (key == "net" || key == "policy") {
          regime[key].update(value);
        } else if (key != "regimes" && key != "forecast_hours") {
          regime[key] = value;
        }
      }
      c.regime = ccl::regime_config_from_json(regime.dump());
    }
    if (j.contains("pool")) {
      const auto& p = j.at("pool");
      read_if(p, "edge_class_defaults", c.edge_class_defaults);
      if (p.contains("coma")) {
        json coma = json::parse(dups::to_json(c.coma));
        coma.update(p.at("coma"));
        c.coma = dups::coma_config_from_json(coma.dump());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.regimes.empty()) throw ConfigError("run config: train.regimes is empty");
  if (c.forecast_hours < 1) throw ConfigError("run config: train.forecast_hours must be >= 1");
  if (c.clustering.m < 1 || c.clustering.k_max < 1 || c.clustering.k < 0)
    throw ConfigError("run config: clustering k_max, m must be >= 1 and k >= 0");
  if (!(c.capacity_gbps > 0.0)) throw ConfigError("run config: data.capacity_gbps must be positive");
  c.regime.net.validate();
  c.coma.validate();
  return c;
}

std::string to_json(const RunConfig& c) {
  json regime = json::parse(ccl::to_json(c.regime));
  json train = {{"regimes", c.regimes}, {"forecast_hours", c.forecast_hours}};
  train.update(regime);
  json coma = json::parse(dups::to_json(c.coma));
  coma.erase("seed");  // pooling seeds derive from the run seed
  const json j = {
      {"data", {{"synth", synth_json(c.synth)},
                {"input", c.input},
                {"scale_to_5g", c.scale_to_5g},
                {"capacity_gbps", c.capacity_gbps}}},
      {"clustering", {{"k_max", c.clustering.k_max}, {"k", c.clustering.k}, {"m", c.clustering.m},
                      {"psi", c.clustering.psi}}},
      {"train", train},
      {"pool", {{"edge_class_defaults", c.edge_class_defaults}, {"coma", coma}}}};
  return j.dump(2) + "\n";
}

std::vector<std::string> expand_values(const std::string& spec) {
  std::vector<std::string> out;
  const auto dots = spec.find("..");
  if (dots != std::string::npos) {
    int lo = 0, hi = 0;
    try {
      std::size_t used = 0;
      lo = std::stoi(spec.substr(0, dots), &used);
      if (used != dots) throw std::invalid_argument("range");
      const std::string tail = spec.substr(dots + 2);
      hi = std::stoi(tail, &used);
      if (used != tail.size()) throw std::invalid_argument("range");
    } catch (const std::logic_error&) {
      throw ConfigError("bad value range '" + spec + "' (expected lo..hi)");
    }
    if (hi < lo) throw ConfigError("bad value range '" + spec + "' (hi < lo)");
    for (int v = lo; v <= hi; ++v) out.push_back(std::to_string(v));
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("no values given");
  return out;
}

// --- stage plumbing -----------------------------------------------------------------

namespace {

constexpr const char* kStations = "data/stations.csv";
constexpr const char* kClustering = "cluster/clustering.json";
constexpr const char* kForecast = "train/forecast.csv";
constexpr const char* kManifest = "manifest.json";

struct Run {
  RunConfig config;
  std::uint64_t seed = 0;
  fs::path out;
  std::string config_hash;

  std::uint64_t stage_seed(std::string_view stage, std::uint64_t index = 0) const {
    return derive_rng(seed, stage, index)();
  }
};

/// Every read and write of one stage, hashed for the manifest.
class Stage {
 public:
  Stage(const Run& run, std::string name) : run_(run), name_(std::move(name)) {}

  std::string read(const std::string& rel) {
    const fs::path path = run_.out / rel;
    if (!fs::exists(path))
      throw ConfigError("missing input file " + path.string() + " (run the stage that produces it first)");
    std::string text = io::read_file(path);
    inputs_[rel] = io::hash_hex(text);
    return text;
  }

  std::string read_external(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("missing input file " + path);
    std::string text = io::read_file(path);
    inputs_[path] = io::hash_hex(text);
    return text;
  }

  void write(const std::string& rel, std::string_view contents) {
    io::write_atomic(run_.out / rel, contents);
    outputs_[rel] = io::hash_hex(contents);
  }

  /// Records a file some module wrote on its own.
  void record(const std::string& rel) { outputs_[rel] = io::hash_hex(io::read_file(run_.out / rel)); }

  /// Merges this stage's record into the run manifest.
  void commit() const {
    const fs::path path = run_.out / kManifest;
    json manifest = json::object();
    if (fs::exists(path)) {
      try {
        manifest = json::parse(io::read_file(path));
      } catch (const json::exception&) {
        manifest = json::object();  // unreadable manifests are rebuilt
      }
    }
    manifest["config"] = {{"path", "config.json"}, {"hash", run_.config_hash}};
    manifest["stages"][name_] = {{"seed", run_.seed},
                                 {"config_hash", run_.config_hash},
                                 {"inputs", inputs_},
                                 {"outputs", outputs_}};
    io::write_atomic(path, manifest.dump(2) + "\n");
  }

 private:
  const Run& run_;
  std::string name_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

void log(const std::string& line) { std::cerr << "ranpool: " << line << "\n"; }

// --- stages ---------------------------------------------------------------------------

void stage_synth(const Run& run) {
  Stage st(run, "synth");
  const auto stations = data::synthesize(run.config.synth, run.stage_seed("synth"));
  st.write(kStations, data::to_csv(stations));
  st.commit();
  log("synth: " + std::to_string(stations.size()) + " stations");
}

void stage_ingest(const Run& run, const std::string& input) {
  if (input.empty()) throw ConfigError("ingest needs --input or data.input");
  Stage st(run, "ingest");
  auto stations = data::ingest_csv_text(st.read_external(input));
  if (run.config.scale_to_5g) stations = data::scale_to_5g(stations, run.config.capacity_gbps).stations;
  st.write(kStations, data::to_csv(stations));
  st.commit();
  log("ingest: " + std::to_string(stations.size()) + " stations");
}

void stage_cluster(const Run& run) {
  Stage st(run, "cluster");
  const auto stations = data::ingest_csv_text(st.read(kStations));
  const auto report = clustering::cluster_stations(stations, run.config.clustering, run.stage_seed("cluster"));
  st.write(kClustering, clustering::to_json(report) + "\n");

  io::CsvWriter elbow({"k", "sse"});
  for (std::size_t k = 0; k < report.elbow_sse.size(); ++k)
    elbow.row({std::to_string(k + 1), io::fmt(report.elbow_sse[k])});
  st.write("cluster/elbow.csv", elbow.str());

  io::CsvWriter members({"edge_id", "cluster", "peak_hours", "bs_id"});
  for (const auto& l : report.logical) {
    std::string hours;
    for (int h : l.peak_hours) hours += (hours.empty() ? "" : " ") + std::to_string(h);
    for (auto id : l.members) members.row({std::to_string(l.edge_id), l.name(), hours, std::to_string(id)});
  }
  st.write("cluster/logical_clusters.csv", members.str());
  st.commit();
  log("cluster: " + std::to_string(report.edges.size()) + " edges, " + std::to_string(report.logical.size()) +
      " logical clusters");
}

/// Next-hour predictions for the last `hours` windows of every station, from
/// the parameters of the station's logical cluster.
std::string forecast_csv(const std::vector<data::BaseStation>& stations,
                         const clustering::ClusteringReport& report, const ccl::RegimeResult& result,
                         const nn::MstNetConfig& net_config, int hours) {
  std::map<StationId, std::size_t> cluster_of;
  for (std::size_t i = 0; i < report.logical.size(); ++i)
    for (auto id : report.logical[i].members) cluster_of[id] = i;
  const nn::Model model(net_config, 0);
  int horizon = hours;
  for (const auto& b : stations)
    horizon = std::min(horizon, static_cast<int>(data::station_windows(b, net_config.q).size()));
  if (horizon < 1) throw ConfigError("forecast: series shorter than the window length");
  io::CsvWriter w({"hour", "bs_id", "traffic_gb", "users"});
  std::vector<data::BaseStation> sorted = stations;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<std::vector<std::string>> rows;
  std::vector<nn::Predictions> preds;
  for (const auto& b : sorted) {
    const auto it = cluster_of.find(b.id);
    if (it == cluster_of.end()) throw ConfigError("forecast: station " + std::to_string(b.id) + " has no cluster");
    auto windows = data::station_windows(b, net_config.q);
    windows.erase(windows.begin(), windows.end() - horizon);
    preds.push_back(nn::predict(model.net, result.params[it->second], windows, result.standardizer));
  }
  for (int h = 0; h < horizon; ++h) {
    for (std::size_t s = 0; s < sorted.size(); ++s) {
      w.row({std::to_string(h), std::to_string(sorted[s].id), io::fmt(std::max(0.0, preds[s].traffic(h))),
             io::fmt(std::max(0.0, preds[s].users(h)))});
    }
  }
  return w.str();
}

std::string standardizer_json(const nn::Standardizer& s) {
  const json j = {{"standardizer",
                   {{"mean", {s.mean(0), s.mean(1), s.mean(2)}}, {"scale", {s.scale(0), s.scale(1), s.scale(2)}}}}};
  return j.dump();
}

void stage_train(const Run& run, const std::vector<std::string>& regimes) {
  Stage st(run, "train");
  const auto stations = data::ingest_csv_text(st.read(kStations));
  const auto report = clustering::clustering_from_json(st.read(kClustering));
  const auto& cfg = run.config.regime;
  const auto clusters = ccl::make_clusters(stations, report, cfg.net.q, run.stage_seed("split"));
  std::vector<ccl::MaeRow> mae;
  std::vector<ccl::CurvePoint> curves;
  for (std::size_t r = 0; r < regimes.size(); ++r) {
    const auto& name = regimes[r];
    const auto result = ccl::run_regime(name, clusters, cfg, run.stage_seed("train"));
    mae.insert(mae.end(), result.mae.begin(), result.mae.end());
    curves.insert(curves.end(), result.curves.begin(), result.curves.end());
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      const std::string stem = "train/checkpoints/" + name + "/" + clusters[i].name;
      nn::save_checkpoint(result.params[i], run.out / stem, standardizer_json(result.standardizer));
      st.record(stem + ".bin");
      st.record(stem + ".json");
    }
    if (r == 0) st.write(kForecast, forecast_csv(stations, report, result, cfg.net, run.config.forecast_hours));
    log("train: " + name + " done");
  }
  st.write("train/mae.csv", ccl::mae_csv(mae));
  st.write("train/curves.csv", ccl::curves_csv(curves));
  st.commit();
}

struct EdgeSetup {
  int edge_id = 0;
  dups::EdgeClass edge_class = dups::EdgeClass::kHigh;
  dups::ComaConfig coma;
  dups::Scenario scenario;
};

/// One pooling scenario per edge with stations, classes ranked by mean
/// forecast traffic per station.
std::vector<EdgeSetup> edge_setups(const Run& run, const std::vector<data::BaseStation>& stations,
                                   const clustering::ClusteringReport& report, const std::string& forecast) {
  std::map<StationId, data::Coordinate> coord;
  for (const auto& b : stations) coord[b.id] = b.coordinate;
  std::vector<EdgeSetup> setups;
  for (const auto& e : report.edges) {
    if (e.members.empty()) continue;
    std::vector<StationId> ids = e.members;
    std::sort(ids.begin(), ids.end());
    std::vector<std::pair<StationId, data::Coordinate>> sites;
    for (auto id : ids) {
      const auto it = coord.find(id);
      if (it == coord.end()) throw ConfigError("pool: station " + std::to_string(id) + " missing from stations");
      sites.emplace_back(id, it->second);
    }
    EdgeSetup s;
    s.edge_id = e.id;
    s.coma = run.config.coma;
    s.scenario = dups::scenario_from_csv(forecast, sites, s.coma);
    setups.push_back(std::move(s));
  }
  std::vector<std::size_t> order(setups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto load = [&](std::size_t i) {
    const auto& sc = setups[i].scenario;
    return sc.traffic.sum() / static_cast<double>(sc.n());
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return load(a) > load(b); });
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    auto& s = setups[order[rank]];
    s.edge_class = dups::edge_class_for_rank(static_cast<int>(rank), static_cast<int>(order.size()));
    if (run.config.edge_class_defaults) dups::apply_edge_class(s.coma, s.edge_class);
    s.coma.seed = run.stage_seed("pool", static_cast<std::uint64_t>(s.edge_id));
    dups::apply_reward_config(s.scenario, s.coma);
  }
  return setups;
}

void stage_pool(const Run& run) {
  Stage st(run, "pool");
  const auto stations = data::ingest_csv_text(st.read(kStations));
  const auto report = clustering::clustering_from_json(st.read(kClustering));
  const auto setups = edge_setups(run, stations, report, st.read(kForecast));
  io::CsvWriter edges({"edge_id", "class", "stations", "alpha", "beta", "d_gb"});
  for (const auto& s : setups) {
    const std::string dir = "pool/edge_" + std::to_string(s.edge_id) + "/";
    const auto trained = dups::train_coma(s.scenario, s.coma);
    auto rows = report::conventional_rows(s.scenario.traffic, s.coma.d_gb);
    const auto bp = report::binpack_baseline(s.scenario.sites, s.scenario.traffic, s.coma.d_gb,
                                             s.scenario.latency_bound_us);
    const auto dp = dups::evaluate_policy(s.scenario, trained.nets, s.coma.steps);
    rows.insert(rows.end(), bp.begin(), bp.end());
    rows.insert(rows.end(), dp.begin(), dp.end());
    st.write(dir + "scenario.csv", dups::scenario_csv(s.scenario));
    st.write(dir + "pooling.csv", report::pooling_csv(rows));
    st.write(dir + "learning_curve.csv", dups::learning_curve_csv(trained.curve));
    st.write(dir + "trace.csv", dups::trace_csv(trained.trace));
    nn::save_checkpoint(trained.nets.actor, run.out / (dir + "actor"), dups::to_json(s.coma));
    st.record(dir + "actor.bin");
    st.record(dir + "actor.json");
    edges.row({std::to_string(s.edge_id), dups::to_string(s.edge_class), std::to_string(s.scenario.n()),
               io::fmt(s.coma.alpha), io::fmt(s.coma.beta), io::fmt(s.coma.d_gb)});
    log("pool: edge " + std::to_string(s.edge_id) + " trained");
  }
  st.write("pool/edges.csv", edges.str());
  st.commit();
}

void stage_report(const Run& run) {
  Stage st(run, "report");
  const auto edges = io::parse_csv(st.read("pool/edges.csv"));
  const std::size_t c_edge = edges.column("edge_id");
  const std::size_t c_class = edges.column("class");
  const std::size_t c_d = edges.column("d_gb");
  io::CsvWriter summary({"edge_id", "class", "reference", "reference_servers", "dups_servers",
                         "power_reduction_w", "efficiency_pct", "cost_saved_usd_h"});
  io::CsvWriter capacity({"edge_id", "hour", "active_servers", "d_gb", "pool_gb", "demand_gb", "rejected_gb"});
  for (const auto& e : edges.rows) {
    const std::string dir = "edge_" + e.at(c_edge) + "/";
    const auto rows = report::pooling_from_csv(st.read("pool/" + dir + "pooling.csv"));
    const auto scenario = io::parse_csv(st.read("pool/" + dir + "scenario.csv"));
    std::vector<report::PoolingRow> conv, bp, dp;
    for (const auto& r : rows) {
      if (r.strategy == report::kConventional) conv.push_back(r);
      else if (r.strategy == report::kBinpack) bp.push_back(r);
      else if (r.strategy == report::kDups) dp.push_back(r);
    }
    const auto table = report::savings_table(conv, bp, dp);
    st.write("report/" + dir + "savings.csv", report::savings_csv(table));
    st.write("report/" + dir + "plotdata_servers.csv", report::plotdata_servers_csv(conv, bp, dp));
    for (const auto& s : table) {
      summary.row({e.at(c_edge), e.at(c_class), s.reference, io::fmt(s.reference_servers), io::fmt(s.dups_servers),
                   io::fmt(s.power_reduction_w), io::fmt(s.efficiency_pct), io::fmt(s.cost_saved_usd_h)});
    }
    // Pool offered by the DUPS plan against demand at the busiest hour.
    std::map<int, double> demand;
    const std::size_t c_hour = scenario.column("hour");
    const std::size_t c_traffic = scenario.column("traffic_gb");
    for (const auto& r : scenario.rows) demand[std::stoi(r.at(c_hour))] += std::stod(r.at(c_traffic));
    int peak = 0;
    for (const auto& [h, v] : demand)
      if (v > demand[peak]) peak = h;
    const double d = std::stod(e.at(c_d));
    for (const auto& r : dp) {
      if (r.hour != peak) continue;
      const auto check = report::capacity_check(r.active_servers, d, demand[peak]);
      capacity.row({e.at(c_edge), std::to_string(peak), std::to_string(r.active_servers), io::fmt(d),
                    io::fmt(check.pool_gb), io::fmt(check.demand_gb), io::fmt(check.rejected_gb)});
    }
  }
  st.write("report/savings.csv", summary.str());
  st.write("report/capacity.csv", capacity.str());

  std::vector<report::AuditFlag> flags;
  for (const auto& row : report::published_rows()) {
    const auto f = report::audit_printed_row(row);
    flags.insert(flags.end(), f.begin(), f.end());
  }
  const auto example = report::capacity_check(15, 192.0, 2900.0);
  st.write("report/audit.log", report::audit_log(flags) + "CHECK pool 15 x 192 GB = " + io::fmt(example.pool_gb) +
                                   " GB against 2900 GB demand: " + io::fmt(example.rejected_gb) +
                                   " GB rejected\n");
  st.commit();
  log("report: " + std::to_string(flags.size()) + " audit flags");
}

// --- ablations --------------------------------------------------------------------------

void require_axis(const std::string& axis) {
  static const std::set<std::string> kAxes{"partners", "omega", "scope", "alpha", "beta", "d", "q"};
  if (!kAxes.count(axis)) throw ConfigError("ablate: unknown axis '" + axis + "'");
}

bool is_ccl_axis(const std::string& axis) {
  return axis == "partners" || axis == "omega" || axis == "scope" || axis == "q";
}

double parse_number(const std::string& axis, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError("ablate: bad value '" + v + "' for axis " + axis);
  }
}

void stage_ablate(const Run& run, const std::string& axis, const std::vector<std::string>& values) {
  require_axis(axis);
  Stage st(run, "ablate-" + axis);
  const auto stations = data::ingest_csv_text(st.read(kStations));
  const auto report = clustering::clustering_from_json(st.read(kClustering));
  if (is_ccl_axis(axis)) {
    io::CsvWriter w({"axis", "value", "cluster", "mae_traffic_gb", "mae_users"});
    for (const auto& v : values) {
      auto cfg = run.config.regime;
      if (axis == "partners") cfg.policy.mode = ccl::parse_partner_mode(v);
      if (axis == "omega") cfg.policy.omega = parse_number(axis, v);
      if (axis == "scope") cfg.policy.scope = nn::parse_scope(v);
      if (axis == "q") cfg.net.q = static_cast<int>(parse_number(axis, v));
      cfg.policy.validate();
      cfg.net.validate();
      const auto clusters = ccl::make_clusters(stations, report, cfg.net.q, run.stage_seed("split"));
      const auto result = ccl::run_ccl(clusters, cfg, run.stage_seed("train"));
      double traffic = 0.0, users = 0.0;
      for (const auto& m : result.mae) {
        w.row({axis, v, m.cluster, io::fmt(m.mae_traffic_gb), io::fmt(m.mae_users)});
        traffic += m.mae_traffic_gb;
        users += m.mae_users;
      }
      const double n = static_cast<double>(result.mae.size());
      w.row({axis, v, "mean", io::fmt(traffic / n), io::fmt(users / n)});
      log("ablate " + axis + "=" + v + ": mean traffic MAE " + io::fmt(traffic / n));
    }
    st.write("ablate/" + axis + ".csv", w.str());
  } else {
    auto setups = edge_setups(run, stations, report, st.read(kForecast));
    if (setups.empty()) throw ConfigError("ablate: no edge with stations");
    // The busiest edge carries the sweep.
    auto base = *std::find_if(setups.begin(), setups.end(),
                              [](const EdgeSetup& s) { return s.edge_class == dups::EdgeClass::kHigh; });
    io::CsvWriter w({"axis", "value", "edge_id", "avg_active_servers", "mean_power_w", "rejected_gb",
                     "mean_latency_us", "final_reward"});
    for (const auto& v : values) {
      auto s = base;
      const double x = parse_number(axis, v);
      if (axis == "alpha") s.coma.alpha = x;
      if (axis == "beta") s.coma.beta = x;
      if (axis == "d") s.coma.d_gb = x;
      s.coma.validate();
      dups::apply_reward_config(s.scenario, s.coma);
      const auto trained = dups::train_coma(s.scenario, s.coma);
      const auto rows = dups::evaluate_policy(s.scenario, trained.nets, s.coma.steps);
      double power = 0.0, rejected = 0.0, latency = 0.0;
      for (const auto& r : rows) {
        power += r.power_watts;
        rejected += r.rejected_gb;
        latency += r.mean_latency_us;
      }
      const double hours = static_cast<double>(rows.size());
      const double final_reward = trained.curve.empty() ? 0.0 : trained.curve.back().mean_reward;
      w.row({axis, v, std::to_string(s.edge_id), io::fmt(report::average_servers(rows)), io::fmt(power / hours),
             io::fmt(rejected), io::fmt(latency / hours), io::fmt(final_reward)});
      log("ablate " + axis + "=" + v + ": " + io::fmt(report::average_servers(rows)) + " servers on average");
    }
    st.write("ablate/" + axis + ".csv", w.str());
  }
  st.commit();
}

bool present(const Run& run, const char* rel) { return fs::exists(run.out / rel); }

/// Produces the data, clustering and (for pooling axes) forecast an
/// ablation reads, unless an earlier run already left them in place.
void ensure_prerequisites(const Run& run, bool need_forecast) {
  if (!present(run, kStations)) {
    if (run.config.input.empty()) stage_synth(run);
    else stage_ingest(run, run.config.input);
  }
  if (!present(run, kClustering)) stage_cluster(run);
  if (need_forecast && !present(run, kForecast)) stage_train(run, {run.config.regimes.front()});
}

}  // namespace

// --- entry point -------------------------------------------------------------------

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Collaborative traffic forecasting and DU pooling pipeline", "ranpool"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "ranpool-out";
  app.add_option("--config", config_path, "run configuration JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "global seed (overrides the config)");
  app.add_option("--out", out, "output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "synthesize station traffic");
  auto* ingest = app.add_subcommand("ingest", "read a station CSV");
  std::string input;
  ingest->add_option("--input", input, "station CSV (time,edge_id,bs_id,x_km,y_km,users,traffic_gb)");
  auto* cluster = app.add_subcommand("cluster", "physical and logical clustering");
  auto* train = app.add_subcommand("train", "train forecasting regimes and write the forecast");
  std::vector<std::string> regimes;
  train->add_option("--regimes", regimes, "regimes to train (ccl idel gl fl pfl ciil)")->delimiter(',');
  auto* pool = app.add_subcommand("pool", "train DU pooling per edge and evaluate against baselines");
  auto* rep = app.add_subcommand("report", "savings tables, plot data and the published-table audit");
  auto* pipeline = app.add_subcommand("pipeline", "all stages in order");
  auto* ablate = app.add_subcommand("ablate", "sweep one axis");
  std::string axis, values;
  ablate->add_option("--axis", axis, "partners | omega | scope | alpha | beta | d | q")->required();
  ablate->add_option("--values", values, "lo..hi or a comma list")->required();
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ranpool: error: " << e.what() << "\n";
    return 2;
  }

  try {
    Run run;
    std::uint64_t config_seed = 0;
    run.config = config_path.empty() ? default_run_config()
                                     : run_config_from_json(io::read_file(config_path), &config_seed);
    run.seed = seed_opt->count() > 0 ? seed : config_seed;
    run.out = out;
    run.config_hash = io::hash_hex(to_json(run.config));
    fs::create_directories(run.out);
    io::write_atomic(run.out / "config.json", to_json(run.config));

    const auto& cfg = run.config;
    if (synth->parsed()) stage_synth(run);
    if (ingest->parsed()) stage_ingest(run, input.empty() ? cfg.input : input);
    if (cluster->parsed()) stage_cluster(run);
    if (train->parsed()) stage_train(run, regimes.empty() ? cfg.regimes : regimes);
    if (pool->parsed()) stage_pool(run);
    if (rep->parsed()) stage_report(run);
    if (pipeline->parsed()) {
      if (cfg.input.empty()) stage_synth(run);
      else stage_ingest(run, cfg.input);
      stage_cluster(run);
      stage_train(run, cfg.regimes);
      stage_pool(run);
      stage_report(run);
    }
    if (ablate->parsed()) {
      require_axis(axis);
      const auto list = expand_values(values);
      ensure_prerequisites(run, !is_ccl_axis(axis));
      stage_ablate(run, axis, list);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "ranpool: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ranpool: failed: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace ranpool::cli
