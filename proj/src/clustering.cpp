#include "ranpool/clustering.hpp"

#include <json.hpp>

#include <limits>
#include <map>
#include <numeric>

namespace ranpool::clustering {

Eigen::MatrixXd pcc_matrix(const Eigen::MatrixXd& profiles) {
  const Eigen::Index n = profiles.cols();
  Eigen::MatrixXd corr(n, n);
  // Each slot is computed independently; no cross-pair reductions.
  for (Eigen::Index i = 0; i < n; ++i) {
    corr(i, i) = pcc(profiles.col(i), profiles.col(i));
    for (Eigen::Index j = i + 1; j < n; ++j) {
      corr(i, j) = pcc(profiles.col(i), profiles.col(j));
      corr(j, i) = corr(i, j);
    }
  }
  return corr;
}

namespace {

constexpr int kMaxIterations = 300;

int nearest(const Eigen::MatrixX2d& centroids, const Eigen::RowVector2d& p, double* dist2) {
  Eigen::Index best = 0;
  const double d = (centroids.rowwise() - p).rowwise().squaredNorm().minCoeff(&best);
  if (dist2) *dist2 = d;
  return static_cast<int>(best);
}

void check_points(const Eigen::MatrixX2d& points, int k) {
  if (points.rows() == 0) throw ConfigError("kmeans: empty point set");
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (k > points.rows())
    throw ConfigError("kmeans: k = " + std::to_string(k) + " exceeds the number of points " +
                      std::to_string(points.rows()));
}

// Index of the point farthest from its nearest centroid.
Eigen::Index farthest_point(const Eigen::MatrixX2d& points, const Eigen::MatrixX2d& centroids) {
  Eigen::Index far = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double d = 0.0;
    nearest(centroids, points.row(i), &d);
    if (d > best) {
      best = d;
      far = i;
    }
  }
  return far;
}

}  // namespace

double sse(const Eigen::MatrixX2d& points, const std::vector<int>& assignments,
           const Eigen::MatrixX2d& centroids) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    total += (points.row(i) - centroids.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

KMeansResult kmeans_from(const Eigen::MatrixX2d& points, Eigen::MatrixX2d centroids) {
  const auto k = static_cast<int>(centroids.rows());
  check_points(points, k);
  const auto n = static_cast<std::size_t>(points.rows());
  KMeansResult result;
  result.assignments.assign(n, -1);

  for (int iter = 1; iter <= kMaxIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(centroids, points.row(static_cast<Eigen::Index>(i)), nullptr);
      if (c != result.assignments[i]) {
        result.assignments[i] = c;
        changed = true;
      }
    }
    result.iterations = iter;
    if (!changed && iter > 1) break;

    Eigen::MatrixX2d sums = Eigen::MatrixX2d::Zero(k, 2);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(result.assignments[i]) += points.row(static_cast<Eigen::Index>(i));
      counts(result.assignments[i]) += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts(c) > 0.0) {
        centroids.row(c) = sums.row(c) / counts(c);
        continue;
      }
      // Emptied cluster: re-seed from the point farthest from its centroid.
      Eigen::Index far = 0;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (points.row(static_cast<Eigen::Index>(i)) -
                          centroids.row(result.assignments[i]))
                             .squaredNorm();
        if (d > best) {
          best = d;
          far = static_cast<Eigen::Index>(i);
        }
      }
      centroids.row(c) = points.row(far);
      result.assignments[static_cast<std::size_t>(far)] = c;
      changed = true;
    }
  }
  result.centroids = std::move(centroids);
  result.sse = sse(points, result.assignments, result.centroids);
  return result;
}

KMeansResult kmeans(const Eigen::MatrixX2d& points, int k, std::uint64_t seed) {
  check_points(points, k);
  Rng rng = derive_rng(seed, "kmeans", static_cast<std::uint64_t>(k));
  const Eigen::Index n = points.rows();
  Eigen::MatrixX2d centroids(k, 2);
  centroids.row(0) = points.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Eigen::VectorXd d2(n);
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i)
      nearest(centroids.topRows(c), points.row(i), &d2(i));
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2(pick);
        if (u < 0.0 && d2(pick) > 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    centroids.row(c) = points.row(pick);
  }
  return kmeans_from(points, std::move(centroids));
}

ElbowResult elbow_select(const Eigen::MatrixX2d& points, int k_max, std::uint64_t seed) {
  if (k_max < 2) throw ConfigError("elbow_select: k_max must be >= 2");
  if (points.rows() == 0) throw ConfigError("kmeans: empty point set");
  const int k_top = std::min<int>(k_max, static_cast<int>(points.rows()));

  ElbowResult out;
  for (int k = 1; k <= k_top; ++k) {
    KMeansResult best = kmeans(points, k, seed);
    if (k > 1) {
      // Warm start from the previous solution plus the worst-served point;
      // Lloyd never increases SSE, so SSE(k) <= SSE(k-1).
      const auto& prev = out.runs.back().centroids;
      Eigen::MatrixX2d init(k, 2);
      init.topRows(k - 1) = prev;
      init.row(k - 1) = points.row(farthest_point(points, prev));
      KMeansResult warm = kmeans_from(points, std::move(init));
      if (warm.sse < best.sse) best = std::move(warm);
    }
    out.sse.push_back(best.sse);
    out.runs.push_back(std::move(best));
  }

  // Improvements are measured against SSE(1), the total dispersion, so the rule
  // reads "one more centroid explains under 10% of the variance".
  out.k = k_top;
  const double total = out.sse.front();
  for (int k = 1; k < k_top; ++k) {
    const double cur = out.sse[static_cast<std::size_t>(k - 1)];
    const double next = out.sse[static_cast<std::size_t>(k)];
    if (cur <= 0.0 || (cur - next) / total < kElbowThreshold) {
      out.k = k;
      break;
    }
  }
  return out;
}

int peak_hour(const Eigen::VectorXd& profile) {
  Eigen::Index h = 0;
  profile.maxCoeff(&h);  // first maximal index
  return static_cast<int>(h);
}

std::vector<PeakCluster> upc_group(const EdgeCloud& edge,
                                   const std::vector<data::BaseStation>& stations) {
  std::map<StationId, const data::BaseStation*> by_id;
  for (const auto& b : stations) by_id[b.id] = &b;

  std::map<int, PeakCluster> groups;
  for (StationId id : edge.members) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("upc_group: unknown station " + std::to_string(id));
    const Eigen::VectorXd profile = it->second->daily_profile();
    const int h = peak_hour(profile);
    auto& p = groups[h];
    if (p.members.empty()) {
      p.peak_hour = h;
      p.profile = Eigen::VectorXd::Zero(data::kHoursPerDay);
    }
    p.members.push_back(id);
    p.profile += profile;
  }
  std::vector<PeakCluster> out;
  for (auto& [h, p] : groups) {
    p.profile /= static_cast<double>(p.members.size());
    out.push_back(std::move(p));
  }
  return out;
}

double partition_score(const Eigen::MatrixXd& corr, const std::vector<std::vector<int>>& groups) {
  if (groups.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : groups) {
    if (g.size() <= 1) {
      total += 1.0;
      continue;
    }
    double s = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < g.size(); ++a)
      for (std::size_t b = a + 1; b < g.size(); ++b, ++pairs) s += corr(g[a], g[b]);
    total += s / pairs;
  }
  return total / static_cast<double>(groups.size());
}

namespace {

// Restricted-growth enumeration of all partitions into exactly m blocks.
struct PartitionSearch {
  const Eigen::MatrixXd& corr;
  int n;
  int m;
  std::vector<int> block;
  std::vector<std::vector<int>> best;
  double best_score = -std::numeric_limits<double>::infinity();

  void run(int i, int used) {
    if (n - i < m - used) return;  // not enough items left to open the missing blocks
    if (i == n) {
      std::vector<std::vector<int>> groups(static_cast<std::size_t>(m));
      for (int k = 0; k < n; ++k) groups[static_cast<std::size_t>(block[static_cast<std::size_t>(k)])].push_back(k);
      const double s = partition_score(corr, groups);
      if (s > best_score) {
        best_score = s;
        best = std::move(groups);
      }
      return;
    }
    for (int b = 0; b < used; ++b) {
      block[static_cast<std::size_t>(i)] = b;
      run(i + 1, used);
    }
    if (used < m) {
      block[static_cast<std::size_t>(i)] = used;
      run(i + 1, used + 1);
    }
  }
};

}  // namespace

Consolidation best_partition(const Eigen::MatrixXd& corr, int m) {
  const auto n = static_cast<int>(corr.rows());
  if (m < 1) throw ConfigError("consolidate: m must be >= 1");
  if (m > n)
    throw ConfigError("consolidate: m = " + std::to_string(m) + " exceeds the " +
                      std::to_string(n) + " non-empty peak clusters");
  Consolidation out;
  if (n <= kExhaustiveLimit) {
    PartitionSearch search{corr, n, m, std::vector<int>(static_cast<std::size_t>(n), 0), {}};
    search.run(0, 0);
    out.groups = std::move(search.best);
    out.score = search.best_score;
    out.exhaustive = true;
    return out;
  }

  std::vector<std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups.push_back({i});
  while (static_cast<int>(groups.size()) > m) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_a = 0, best_b = 1;
    for (std::size_t a = 0; a < groups.size(); ++a) {
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        auto trial = groups;
        trial[a].insert(trial[a].end(), trial[b].begin(), trial[b].end());
        trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(b));
        const double s = partition_score(corr, trial);
        if (s > best) {
          best = s;
          best_a = a;
          best_b = b;
        }
      }
    }
    groups[best_a].insert(groups[best_a].end(), groups[best_b].begin(), groups[best_b].end());
    std::sort(groups[best_a].begin(), groups[best_a].end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
  out.score = partition_score(corr, groups);
  out.groups = std::move(groups);
  out.exhaustive = false;
  return out;
}

std::vector<LogicalCluster> consolidate(const std::vector<PeakCluster>& peaks, int m, int edge_id) {
  std::vector<const PeakCluster*> nonempty;
  for (const auto& p : peaks)
    if (!p.members.empty()) nonempty.push_back(&p);
  if (m > static_cast<int>(nonempty.size()))
    throw ConfigError("consolidate: m = " + std::to_string(m) + " exceeds the " +
                      std::to_string(nonempty.size()) + " non-empty peak clusters");

  Eigen::MatrixXd profiles(data::kHoursPerDay, static_cast<Eigen::Index>(nonempty.size()));
  for (std::size_t i = 0; i < nonempty.size(); ++i)
    profiles.col(static_cast<Eigen::Index>(i)) = nonempty[i]->profile;
  const Consolidation best = best_partition(pcc_matrix(profiles), m);

  std::vector<LogicalCluster> out;
  for (std::size_t g = 0; g < best.groups.size(); ++g) {
    LogicalCluster l;
    l.edge_id = edge_id;
    l.index = static_cast<int>(g) + 1;
    l.profile = Eigen::VectorXd::Zero(data::kHoursPerDay);
    for (int i : best.groups[g]) {
      const auto& p = *nonempty[static_cast<std::size_t>(i)];
      l.peak_hours.push_back(p.peak_hour);
      l.members.insert(l.members.end(), p.members.begin(), p.members.end());
      l.profile += p.profile * static_cast<double>(p.members.size());
    }
    l.profile /= static_cast<double>(l.members.size());
    std::sort(l.members.begin(), l.members.end());
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<CollaborationSet> build_collab_sets(const Eigen::MatrixXd& corr, double psi) {
  std::vector<CollaborationSet> out;
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    CollaborationSet c;
    c.owner = static_cast<int>(i);
    c.threshold = psi;
    for (Eigen::Index j = 0; j < corr.cols(); ++j)
      if (i != j && corr(i, j) >= psi) c.partners.push_back(static_cast<int>(j));
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CollaborationSet> build_collab_sets(const std::vector<LogicalCluster>& all_logical,
                                                double psi) {
  Eigen::MatrixXd profiles(data::kHoursPerDay, static_cast<Eigen::Index>(all_logical.size()));
  for (std::size_t i = 0; i < all_logical.size(); ++i)
    profiles.col(static_cast<Eigen::Index>(i)) = all_logical[i].profile;
  return build_collab_sets(pcc_matrix(profiles), psi);
}

ClusteringReport cluster_stations(const std::vector<data::BaseStation>& stations,
                                  const ClusteringConfig& config, std::uint64_t seed) {
  if (stations.empty()) throw ConfigError("cluster: no stations");
  Eigen::MatrixX2d points(static_cast<Eigen::Index>(stations.size()), 2);
  for (std::size_t i = 0; i < stations.size(); ++i)
    points.row(static_cast<Eigen::Index>(i)) << stations[i].coordinate.x_km,
        stations[i].coordinate.y_km;

  ClusteringReport report;
  KMeansResult physical;
  if (config.k > 0) {
    physical = kmeans(points, config.k, seed);
  } else {
    const int k_max = std::min<int>(config.k_max, static_cast<int>(stations.size()));
    if (k_max < 2) {
      physical = kmeans(points, 1, seed);
      report.elbow_sse = {physical.sse};
    } else {
      ElbowResult elbow = elbow_select(points, k_max, seed);
      report.elbow_sse = elbow.sse;
      physical = std::move(elbow.runs[static_cast<std::size_t>(elbow.k - 1)]);
    }
  }

  for (Eigen::Index c = 0; c < physical.centroids.rows(); ++c) {
    EdgeCloud e;
    e.id = static_cast<int>(c) + 1;
    e.centroid = {physical.centroids(c, 0), physical.centroids(c, 1)};
    report.edges.push_back(e);
  }
  for (std::size_t i = 0; i < stations.size(); ++i)
    report.edges[static_cast<std::size_t>(physical.assignments[i])].members.push_back(stations[i].id);

  for (const auto& edge : report.edges) {
    auto peaks = upc_group(edge, stations);
    const int m = std::min<int>(config.m, static_cast<int>(peaks.size()));
    auto logical = consolidate(peaks, m, edge.id);
    report.logical.insert(report.logical.end(), logical.begin(), logical.end());
    report.peaks.push_back(std::move(peaks));
  }

  Eigen::MatrixXd profiles(data::kHoursPerDay, static_cast<Eigen::Index>(report.logical.size()));
  for (std::size_t i = 0; i < report.logical.size(); ++i)
    profiles.col(static_cast<Eigen::Index>(i)) = report.logical[i].profile;
  report.corr = pcc_matrix(profiles);
  report.collab = build_collab_sets(report.corr, config.psi);
  return report;
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

std::string to_json(const ClusteringReport& report) {
  nlohmann::json j;
  j["edges"] = nlohmann::json::array();
  for (const auto& e : report.edges)
    j["edges"].push_back({{"id", e.id},
                          {"centroid_km", {e.centroid.x_km, e.centroid.y_km}},
                          {"members", e.members}});
  j["elbow_sse"] = report.elbow_sse;
  j["peak_clusters"] = nlohmann::json::array();
  for (std::size_t e = 0; e < report.peaks.size(); ++e)
    for (const auto& p : report.peaks[e])
      j["peak_clusters"].push_back({{"edge_id", report.edges[e].id},
                                    {"peak_hour", p.peak_hour},
                                    {"members", p.members},
                                    {"profile", vec_json(p.profile)}});
  j["logical_clusters"] = nlohmann::json::array();
  for (const auto& l : report.logical)
    j["logical_clusters"].push_back({{"name", l.name()},
                                     {"edge_id", l.edge_id},
                                     {"index", l.index},
                                     {"peak_hours", l.peak_hours},
                                     {"members", l.members},
                                     {"profile", vec_json(l.profile)}});
  j["pcc_matrix"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < report.corr.rows(); ++i)
    j["pcc_matrix"].push_back(vec_json(report.corr.row(i).transpose()));
  j["collaboration_sets"] = nlohmann::json::array();
  for (const auto& c : report.collab)
    j["collaboration_sets"].push_back(
        {{"owner", c.owner}, {"partners", c.partners}, {"threshold", c.threshold}});
  return j.dump(2) + "\n";
}

ClusteringReport clustering_from_json(const std::string& text) {
  ClusteringReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& e : j.at("edges")) {
      EdgeCloud edge;
      edge.id = e.at("id").get<int>();
      const auto c = e.at("centroid_km").get<std::vector<double>>();
      edge.centroid = {c.at(0), c.at(1)};
      edge.members = e.at("members").get<std::vector<StationId>>();
      r.edges.push_back(std::move(edge));
    }
    r.elbow_sse = j.value("elbow_sse", std::vector<double>{});
    r.peaks.resize(r.edges.size());
    for (const auto& p : j.value("peak_clusters", nlohmann::json::array())) {
      PeakCluster pc;
      pc.peak_hour = p.at("peak_hour").get<int>();
      pc.members = p.at("members").get<std::vector<StationId>>();
      pc.profile = json_vec(p.at("profile"));
      const int edge_id = p.at("edge_id").get<int>();
      for (std::size_t e = 0; e < r.edges.size(); ++e)
        if (r.edges[e].id == edge_id) r.peaks[e].push_back(pc);
    }
    for (const auto& l : j.at("logical_clusters")) {
      LogicalCluster lc;
      lc.edge_id = l.at("edge_id").get<int>();
      lc.index = l.at("index").get<int>();
      lc.peak_hours = l.at("peak_hours").get<std::vector<int>>();
      lc.members = l.at("members").get<std::vector<StationId>>();
      lc.profile = json_vec(l.at("profile"));
      r.logical.push_back(std::move(lc));
    }
    const auto& rows = j.at("pcc_matrix");
    const auto n = static_cast<Eigen::Index>(rows.size());
    r.corr.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) r.corr.row(i) = json_vec(rows[static_cast<std::size_t>(i)]).transpose();
    for (const auto& c : j.at("collaboration_sets")) {
      CollaborationSet cs;
      cs.owner = c.at("owner").get<int>();
      cs.partners = c.at("partners").get<std::vector<int>>();
      cs.threshold = c.at("threshold").get<double>();
      r.collab.push_back(std::move(cs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("clustering report: ") + e.what());
  }
  return r;
}

}  // namespace ranpool::clustering
