#include "ranpool/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ranpool/io.hpp"

namespace ranpool::data {

namespace {

constexpr std::string_view kHeader = "time,edge_id,bs_id,x_km,y_km,users,traffic_gb";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw ParseError("line " + std::to_string(line) + ": " + what);
}

double parse_real(const std::string& field, std::size_t line, const char* name) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(v))
    fail(line, std::string("non-numeric ") + name + " '" + field + "'");
  return v;
}

std::int64_t parse_int(const std::string& field, std::size_t line, const char* name) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0' || errno == ERANGE)
    fail(line, std::string("non-integer ") + name + " '" + field + "'");
  return v;
}

std::optional<double> parse_optional_nonneg(const std::string& field, std::size_t line,
                                            const char* name) {
  if (field.empty()) return std::nullopt;
  const double v = parse_real(field, line, name);
  if (v < 0.0) fail(line, std::string("negative ") + name);
  return v;
}

struct StationRows {
  Coordinate coordinate;
  std::optional<std::int64_t> edge_id;
  std::map<std::int64_t, std::pair<std::optional<double>, std::optional<double>>> by_time;
};

}  // namespace

Eigen::VectorXd BaseStation::daily_profile() const {
  Eigen::VectorXd profile = Eigen::VectorXd::Zero(kHoursPerDay);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(kHoursPerDay);
  for (Eigen::Index t = 0; t < traffic.size(); ++t) {
    profile(t % kHoursPerDay) += traffic(t);
    count(t % kHoursPerDay) += 1.0;
  }
  return profile.cwiseQuotient(count.cwiseMax(1.0));
}

Eigen::VectorXd interpolate_gaps(const std::vector<std::optional<double>>& values) {
  const auto n = static_cast<Eigen::Index>(values.size());
  Eigen::VectorXd out(n);
  std::vector<Eigen::Index> known;
  for (Eigen::Index i = 0; i < n; ++i)
    if (values[i]) known.push_back(i);
  if (known.empty()) throw ParseError("series has no observed values");

  for (Eigen::Index i = 0; i < n; ++i) {
    if (values[i]) {
      out(i) = *values[i];
      continue;
    }
    const auto next = std::lower_bound(known.begin(), known.end(), i);
    if (next == known.begin()) {
      out(i) = *values[*next];
    } else if (next == known.end()) {
      out(i) = *values[known.back()];
    } else {
      const Eigen::Index hi = *next;
      const Eigen::Index lo = *std::prev(next);
      const double w = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
      out(i) = (1.0 - w) * *values[lo] + w * *values[hi];
    }
  }
  return out;
}

std::vector<BaseStation> ingest_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("line 1: empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (trim(line) != kHeader)
    fail(line_no, "header must be '" + std::string(kHeader) + "'");

  std::map<StationId, StationRows> rows;
  std::int64_t max_time = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto f = split_fields(line);
    if (f.size() != 7) fail(line_no, "expected 7 fields, got " + std::to_string(f.size()));
    for (auto& s : f) s = trim(s);

    const std::int64_t time = parse_int(f[0], line_no, "time");
    if (time < 0) fail(line_no, "negative time");
    std::optional<std::int64_t> edge;
    if (!f[1].empty()) edge = parse_int(f[1], line_no, "edge_id");
    const StationId bs = parse_int(f[2], line_no, "bs_id");
    const Coordinate c{parse_real(f[3], line_no, "x_km"), parse_real(f[4], line_no, "y_km")};
    const auto users = parse_optional_nonneg(f[5], line_no, "users");
    const auto traffic = parse_optional_nonneg(f[6], line_no, "traffic_gb");

    auto [it, inserted] = rows.try_emplace(bs);
    if (inserted) {
      it->second.coordinate = c;
      it->second.edge_id = edge;
    }
    if (!it->second.by_time.emplace(time, std::make_pair(traffic, users)).second)
      fail(line_no, "duplicate (bs_id, time) = (" + f[2] + ", " + f[0] + ")");
    max_time = std::max(max_time, time);
  }
  if (rows.empty()) throw ParseError("no data rows");

  std::vector<BaseStation> stations;
  const auto hours = static_cast<std::size_t>(max_time + 1);
  for (const auto& [id, r] : rows) {
    std::vector<std::optional<double>> traffic(hours), users(hours);
    for (const auto& [t, v] : r.by_time) {
      traffic[static_cast<std::size_t>(t)] = v.first;
      users[static_cast<std::size_t>(t)] = v.second;
    }
    BaseStation b;
    b.id = id;
    b.coordinate = r.coordinate;
    b.edge_id = r.edge_id;
    try {
      b.traffic = interpolate_gaps(traffic);
      b.users = interpolate_gaps(users);
    } catch (const ParseError&) {
      throw ParseError("bs_id " + std::to_string(id) + ": entire series is missing");
    }
    stations.push_back(std::move(b));
  }
  return stations;
}

std::vector<BaseStation> ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ingest_csv_text(ss.str());
}

std::string to_csv(const std::vector<BaseStation>& stations) {
  std::ostringstream out;
  out << kHeader << '\n';
  out.precision(17);
  for (const auto& b : stations) {
    for (Eigen::Index t = 0; t < b.hours(); ++t) {
      out << t << ',';
      if (b.edge_id) out << *b.edge_id;
      out << ',' << b.id << ',' << b.coordinate.x_km << ',' << b.coordinate.y_km << ','
          << b.users(t) << ',' << b.traffic(t) << '\n';
    }
  }
  return out.str();
}

void write_csv(const std::filesystem::path& path, const std::vector<BaseStation>& stations) {
  io::write_atomic(path, to_csv(stations));
}

ScaleResult scale_to_5g(const std::vector<BaseStation>& stations, double capacity_gbps) {
  if (!(capacity_gbps > 0.0)) throw ConfigError("capacity_gbps must be positive");
  ScaleResult result;
  result.stations.reserve(stations.size());
  for (const auto& b : stations) {
    BaseStation scaled = b;
    const double peak_gb = b.traffic.size() ? b.traffic.maxCoeff() : 0.0;
    if (peak_gb > 0.0) {
      scaled.traffic *= capacity_gbps / gb_per_hour_to_gbps(peak_gb);
    } else {
      result.unscaled.push_back(b.id);
    }
    result.stations.push_back(std::move(scaled));
  }
  return result;
}

SynthConfig synth_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  SynthConfig c;
  try {
    c.stations = j.at("stations").get<int>();
    c.days = j.at("days").get<int>();
    for (const auto& g : j.at("groups")) {
      GroupSpec spec;
      spec.peak_hour = g.at("peak_hour").get<int>();
      spec.mean_gb = g.value("mean_gb", spec.mean_gb);
      spec.mean_users = g.value("mean_users", spec.mean_users);
      c.groups.push_back(spec);
    }
    c.noise_frac = j.value("noise_frac", 0.0);
    if (j.contains("bbox_km")) {
      const auto& bb = j.at("bbox_km");
      if (!bb.is_array() || bb.size() != 4) throw ConfigError("bbox_km must be [x0,y0,x1,y1]");
      for (std::size_t i = 0; i < 4; ++i) c.bbox_km[i] = bb[i].get<double>();
    }
    c.seed = j.value("seed", std::uint64_t{0});
    c.spatial_clusters = j.value("spatial_clusters", 0);
    c.spread_km = j.value("spread_km", c.spread_km);
    c.amplitude_jitter = j.value("amplitude_jitter", 0.0);
    c.peak_width_h = j.value("peak_width_h", c.peak_width_h);
    c.base_level = j.value("base_level", c.base_level);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  return c;
}

int synth_group_of(const SynthConfig& config, int station_index) {
  const int groups = static_cast<int>(config.groups.size());
  if (config.spatial_clusters > 0) return (station_index / config.spatial_clusters) % groups;
  return station_index % groups;
}

Eigen::VectorXd daily_shape(int peak_hour, double width_h, double base_level) {
  Eigen::VectorXd shape(kHoursPerDay);
  for (int h = 0; h < kHoursPerDay; ++h) {
    const int raw = std::abs(h - peak_hour) % kHoursPerDay;
    const double d = std::min(raw, kHoursPerDay - raw);
    shape(h) = base_level + std::exp(-d * d / (2.0 * width_h * width_h));
  }
  return shape / shape.mean();
}

std::vector<BaseStation> synthesize(const SynthConfig& config, std::uint64_t seed) {
  if (config.stations <= 0) throw ConfigError("synthesize: zero stations");
  if (config.days <= 0) throw ConfigError("synthesize: zero days");
  if (config.groups.empty()) throw ConfigError("synthesize: no groups");
  for (const auto& g : config.groups) {
    if (g.peak_hour < 0 || g.peak_hour >= kHoursPerDay)
      throw ConfigError("synthesize: peak_hour outside 0..23");
    if (g.mean_gb < 0.0 || g.mean_users < 0.0)
      throw ConfigError("synthesize: negative group mean");
  }
  if (config.noise_frac < 0.0 || config.amplitude_jitter < 0.0 ||
      config.amplitude_jitter >= 1.0 || !(config.peak_width_h > 0.0) || config.base_level < 0.0)
    throw ConfigError("synthesize: invalid noise/shape parameters");
  const auto [x0, y0, x1, y1] = config.bbox_km;
  if (!(x1 > x0) || !(y1 > y0)) throw ConfigError("synthesize: empty bounding box");

  Rng rng = derive_rng(seed, "synthesize");
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Coordinate> centers;
  for (int c = 0; c < config.spatial_clusters; ++c) centers.push_back({ux(rng), uy(rng)});

  std::vector<Eigen::VectorXd> shapes;
  for (const auto& g : config.groups)
    shapes.push_back(daily_shape(g.peak_hour, config.peak_width_h, config.base_level));

  const int hours = config.days * kHoursPerDay;
  std::vector<BaseStation> out;
  out.reserve(static_cast<std::size_t>(config.stations));
  for (int s = 0; s < config.stations; ++s) {
    BaseStation b;
    b.id = s;
    if (centers.empty()) {
      b.coordinate = {ux(rng), uy(rng)};
    } else {
      const auto& c = centers[static_cast<std::size_t>(s % config.spatial_clusters)];
      b.coordinate = {std::clamp(c.x_km + config.spread_km * normal(rng), x0, x1),
                      std::clamp(c.y_km + config.spread_km * normal(rng), y0, y1)};
    }
    const double amplitude =
        1.0 + config.amplitude_jitter * (2.0 * std::uniform_real_distribution<double>()(rng) - 1.0);
    const int group = synth_group_of(config, s);
    const auto& spec = config.groups[static_cast<std::size_t>(group)];
    const auto& shape = shapes[static_cast<std::size_t>(group)];

    b.traffic.resize(hours);
    b.users.resize(hours);
    for (int t = 0; t < hours; ++t) {
      const double level = shape(t % kHoursPerDay) * amplitude;
      const double traffic =
          spec.mean_gb * (level + config.noise_frac * normal(rng));
      const double users =
          spec.mean_users * (level + config.noise_frac * normal(rng));
      b.traffic(t) = std::max(0.0, traffic);
      b.users(t) = std::max(0.0, std::round(users));
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<SequenceSample> station_windows(const BaseStation& station, int q) {
  const Eigen::Index n = station.hours();
  if (q < 1) throw ConfigError("windowize: q must be >= 1");
  if (q >= n)
    throw ConfigError("windowize: q = " + std::to_string(q) +
                      " must be shorter than the series length " + std::to_string(n));
  std::vector<SequenceSample> samples;
  samples.reserve(static_cast<std::size_t>(n - q));
  for (Eigen::Index s = 0; s + q < n; ++s) {
    SequenceSample sample;
    sample.station = station.id;
    sample.start = s;
    sample.inputs.resize(q, kFeatureCount);
    for (int k = 0; k < q; ++k) {
      sample.inputs(k, 0) = station.traffic(s + k);
      sample.inputs(k, 1) = station.users(s + k);
      sample.inputs(k, 2) = static_cast<double>((s + k) % kHoursPerDay);
    }
    sample.target_traffic = station.traffic(s + q);
    sample.target_users = station.users(s + q);
    samples.push_back(std::move(sample));
  }
  return samples;
}

DatasetSplit windowize(const std::vector<BaseStation>& stations, int q, std::uint64_t seed) {
  std::vector<SequenceSample> all;
  for (const auto& b : stations) {
    auto w = station_windows(b, q);
    std::move(w.begin(), w.end(), std::back_inserter(all));
  }
  Rng rng = derive_rng(seed, "windowize");
  std::shuffle(all.begin(), all.end(), rng);

  DatasetSplit split;
  const auto n = all.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n))));
  auto it = std::make_move_iterator(all.begin());
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(it + static_cast<std::ptrdiff_t>(n_train),
                          it + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val),
                    std::make_move_iterator(all.end()));
  return split;
}

}  // namespace ranpool::data
