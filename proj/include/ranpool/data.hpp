#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ranpool/common.hpp"

namespace ranpool::data {

constexpr int kHoursPerDay = 24;

struct Coordinate {
  double x_km = 0.0;
  double y_km = 0.0;
};

inline double distance_km(const Coordinate& a, const Coordinate& b) {
  const double dx = a.x_km - b.x_km;
  const double dy = a.y_km - b.y_km;
  return std::sqrt(dx * dx + dy * dy);
}

/// One CSV row: a station's traffic and user count for one hour.
struct TrafficRecord {
  std::int64_t time = 0;
  std::optional<std::int64_t> edge_id;
  StationId bs_id = 0;
  Coordinate coordinate;
  std::optional<double> users;
  std::optional<double> traffic_gb;
};

/// Gap-free hourly series of one base station.
struct BaseStation {
  StationId id = 0;
  Coordinate coordinate;
  std::optional<std::int64_t> edge_id;
  Eigen::VectorXd traffic;  // GB per hour
  Eigen::VectorXd users;

  Eigen::Index hours() const { return traffic.size(); }
  /// Hour-of-day profile averaged over all recorded days.
  Eigen::VectorXd daily_profile() const;
};

/// q consecutive hours of (traffic, users, hour-of-day) and the next-hour targets.
struct SequenceSample {
  StationId station = 0;
  Eigen::Index start = 0;
  Eigen::MatrixXd inputs;  // q x kFeatureCount
  double target_traffic = 0.0;
  double target_users = 0.0;
};

constexpr int kFeatureCount = 3;

struct DatasetSplit {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> validation;
  std::vector<SequenceSample> test;
  std::array<double, 3> proportions{0.70, 0.15, 0.15};

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
};

/// Parse `time,edge_id,bs_id,x_km,y_km,users,traffic_gb`. Missing hours
/// are interpolated linearly; leading/trailing gaps take the nearest value.
std::vector<BaseStation> ingest_csv(const std::filesystem::path& path);
std::vector<BaseStation> ingest_csv_text(const std::string& text);

void write_csv(const std::filesystem::path& path,
               const std::vector<BaseStation>& stations);
std::string to_csv(const std::vector<BaseStation>& stations);

/// Fill gaps in a series of optional values. Throws if every value is missing.
Eigen::VectorXd interpolate_gaps(const std::vector<std::optional<double>>& values);

struct ScaleResult {
  std::vector<BaseStation> stations;
  std::vector<StationId> unscaled;  // all-zero stations passed through
};

/// Convert a GB-per-hour volume to its mean rate in Gbps.
inline double gb_per_hour_to_gbps(double gb) { return gb * 8.0 / 3600.0; }

/// Per-station rescale so the peak hourly rate equals `capacity_gbps`.
ScaleResult scale_to_5g(const std::vector<BaseStation>& stations,
                        double capacity_gbps = 4.0);

struct GroupSpec {
  int peak_hour = 0;
  double mean_gb = 30.0;
  double mean_users = 445.0;
};

struct SynthConfig {
  int stations = 0;
  int days = 0;
  std::vector<GroupSpec> groups;
  double noise_frac = 0.0;
  std::array<double, 4> bbox_km{0.0, 0.0, 40.0, 40.0};  // x0, y0, x1, y1
  std::uint64_t seed = 0;
  // Spatial blobs; 0 draws coordinates uniformly from the bounding box.
  int spatial_clusters = 0;
  double spread_km = 1.0;
  // Per-station multiplicative amplitude in [1 - j, 1 + j].
  double amplitude_jitter = 0.0;
  // Gaussian width (hours) of the daily peak.
  double peak_width_h = 2.0;
  // Off-peak floor relative to the peak bump height; lower means a deeper trough.
  double base_level = 0.25;
};

SynthConfig synth_config_from_json(const std::string& json_text);

/// Group index a synthesized station belongs to.
int synth_group_of(const SynthConfig& config, int station_index);

/// Noise-free daily shape with unit mean, peaking at `peak_hour`.
Eigen::VectorXd daily_shape(int peak_hour, double width_h, double base_level = 0.25);

std::vector<BaseStation> synthesize(const SynthConfig& config, std::uint64_t seed);

/// Overlapping windows of length q, shuffled by `seed` and split 70/15/15.
DatasetSplit windowize(const std::vector<BaseStation>& stations, int q,
                       std::uint64_t seed);

/// All windows of one station in time order (no shuffling).
std::vector<SequenceSample> station_windows(const BaseStation& station, int q);

}  // namespace ranpool::data
