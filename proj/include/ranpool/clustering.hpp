#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ranpool/common.hpp"
#include "ranpool/data.hpp"

namespace ranpool::clustering {

/// Pearson correlation of two equal-length series. Returns 0 when either
/// series has zero variance.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar pcc(const Eigen::DenseBase<DerivedX>& x,
                              const Eigen::DenseBase<DerivedY>& y) {
  using Scalar = typename DerivedX::Scalar;
  if (x.size() != y.size())
    throw ShapeError("pcc: length mismatch (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  if (x.size() < 2) throw ShapeError("pcc: series needs at least two points");
  const auto xc = (x.derived().array() - x.derived().mean()).eval();
  const auto yc = (y.derived().array() - y.derived().mean()).eval();
  const Scalar sxx = xc.square().sum();
  const Scalar syy = yc.square().sum();
  if (sxx == Scalar(0) || syy == Scalar(0)) return Scalar(0);
  const Scalar r = (xc * yc).sum() / std::sqrt(sxx * syy);
  return std::clamp(r, Scalar(-1), Scalar(1));
}

/// Symmetric PCC matrix over the columns of `profiles` (hours x series).
Eigen::MatrixXd pcc_matrix(const Eigen::MatrixXd& profiles);

struct KMeansResult {
  std::vector<int> assignments;
  Eigen::MatrixX2d centroids;
  double sse = 0.0;
  int iterations = 0;
};

/// Sum of squared distances of each point to its assigned centroid.
double sse(const Eigen::MatrixX2d& points, const std::vector<int>& assignments,
           const Eigen::MatrixX2d& centroids);

/// Lloyd's iteration from k-means++ seeding (at most 300 iterations).
KMeansResult kmeans(const Eigen::MatrixX2d& points, int k, std::uint64_t seed);

/// Lloyd's iteration from explicit initial centroids.
KMeansResult kmeans_from(const Eigen::MatrixX2d& points, Eigen::MatrixX2d centroids);

struct ElbowResult {
  int k = 1;
  std::vector<double> sse;  // sse[k-1] for k = 1..k_max, non-increasing
  std::vector<KMeansResult> runs;
};

/// Fraction of SSE(1) that one more centroid must remove to keep growing k.
constexpr double kElbowThreshold = 0.10;

/// Smallest k whose improvement SSE(k) -> SSE(k+1) falls under 10% of SSE(1).
ElbowResult elbow_select(const Eigen::MatrixX2d& points, int k_max, std::uint64_t seed);

struct EdgeCloud {
  int id = 0;
  data::Coordinate centroid;
  std::vector<StationId> members;
};

struct PeakCluster {
  int peak_hour = 0;
  std::vector<StationId> members;
  Eigen::VectorXd profile;  // 24-hour member mean
};

struct LogicalCluster {
  int edge_id = 0;
  int index = 0;  // 1-based within the edge
  std::vector<int> peak_hours;
  std::vector<StationId> members;
  Eigen::VectorXd profile;

  std::string name() const {
    return "L" + std::to_string(edge_id) + "_" + std::to_string(index);
  }
};

struct CollaborationSet {
  int owner = 0;              // index into the global logical-cluster list
  std::vector<int> partners;  // ascending indices
  double threshold = 0.95;
};

/// Argmax hour of a 24-value profile; ties go to the earliest hour.
int peak_hour(const Eigen::VectorXd& profile);

/// Group an edge's stations by peak hour. Stations are looked up by id.
std::vector<PeakCluster> upc_group(const EdgeCloud& edge,
                                   const std::vector<data::BaseStation>& stations);

/// Mean over groups of the mean within-group pairwise PCC (singleton = 1).
double partition_score(const Eigen::MatrixXd& corr, const std::vector<std::vector<int>>& groups);

struct Consolidation {
  std::vector<std::vector<int>> groups;  // indices into the peak-cluster list
  double score = 0.0;
  bool exhaustive = true;
};

/// Largest peak-cluster count searched exhaustively.
constexpr int kExhaustiveLimit = 12;

/// Partition of `corr`'s items into m groups maximizing partition_score.
Consolidation best_partition(const Eigen::MatrixXd& corr, int m);

std::vector<LogicalCluster> consolidate(const std::vector<PeakCluster>& peaks, int m,
                                        int edge_id = 0);

/// Membership j in C_i iff i != j and corr(i, j) >= psi.
std::vector<CollaborationSet> build_collab_sets(const std::vector<LogicalCluster>& all_logical,
                                                double psi = 0.95);
std::vector<CollaborationSet> build_collab_sets(const Eigen::MatrixXd& corr, double psi = 0.95);

struct ClusteringConfig {
  int k_max = 10;
  int k = 0;  // 0 selects k by the elbow rule
  int m = 2;
  double psi = 0.95;
};

struct ClusteringReport {
  std::vector<EdgeCloud> edges;
  std::vector<double> elbow_sse;
  std::vector<std::vector<PeakCluster>> peaks;  // per edge
  std::vector<LogicalCluster> logical;
  Eigen::MatrixXd corr;
  std::vector<CollaborationSet> collab;
};

/// Physical clustering, per-edge UPC and consolidation, then collaboration sets.
ClusteringReport cluster_stations(const std::vector<data::BaseStation>& stations,
                                  const ClusteringConfig& config, std::uint64_t seed);

std::string to_json(const ClusteringReport& report);
ClusteringReport clustering_from_json(const std::string& text);

}  // namespace ranpool::clustering
