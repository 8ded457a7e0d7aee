#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "ranpool/data.hpp"

namespace ranpool::report {

inline constexpr const char* kConventional = "conventional";
inline constexpr const char* kBinpack = "binpack (MILP stand-in)";
inline constexpr const char* kDups = "dups";

/// Electricity price in USD per kWh.
constexpr double kUsdPerKwh = 0.13;

/// One strategy's outcome for one hour.
struct PoolingRow {
  std::string strategy;
  int hour = 0;
  int active_servers = 0;
  double power_watts = 0.0;
  double rejected_gb = 0.0;
  double mean_latency_us = 0.0;
  double max_latency_us = 0.0;
  double lower_bound = 0.0;  // ceil(total traffic / d) for the hour
};

/// Every DU ON and hosting its own traffic.
std::vector<PoolingRow> conventional_rows(const Eigen::MatrixXd& traffic, double capacity_gb);

struct BinpackHour {
  std::vector<Eigen::Index> host;  // serving DU per site, -1 for idle sites
  Eigen::VectorXd load;
  int servers = 0;
  int lower_bound = 0;
};

/// First-fit-decreasing static packing for one hour. Sites are taken in
/// decreasing load; each goes to the first open host (in opening order) within
/// reach with room (load + traffic <= d). Failing that, a new host opens at the
/// closed site in reach that covers the most still-unplaced traffic (ties: the
/// site itself, then lowest index); it also takes its own unplaced traffic, so
/// only hosts where both fit qualify. A site whose own load exceeds d opens its
/// own DU.
BinpackHour binpack_hour(const std::vector<data::Coordinate>& sites,
                         const Eigen::VectorXd& traffic, double capacity_gb,
                         double latency_bound_us);

std::vector<PoolingRow> binpack_baseline(const std::vector<data::Coordinate>& sites,
                                         const Eigen::MatrixXd& traffic, double capacity_gb,
                                         double latency_bound_us);

inline int lower_bound_servers(double total_gb, double capacity_gb) {
  return static_cast<int>(std::ceil(total_gb / capacity_gb - 1e-12));
}

/// Comparison of a reference strategy against DUPS from average server counts.
struct Savings {
  std::string reference;
  double reference_servers = 0.0;
  double dups_servers = 0.0;
  double power_reduction_w = 0.0;  // (n_ref - n_dups) x 650
  double efficiency_pct = 0.0;     // (n_ref - n_dups) / n_ref x 100
  double cost_saved_usd_h = 0.0;   // power_reduction x 0.13 / 1000
};

Savings savings(const std::string& reference, double reference_servers, double dups_servers);

/// Table-shaped aggregate: DUPS against the conventional and binpack columns.
/// Rows must cover the same hours for every strategy.
std::vector<Savings> savings_table(const std::vector<PoolingRow>& conventional,
                                   const std::vector<PoolingRow>& binpack,
                                   const std::vector<PoolingRow>& dups);

double average_servers(const std::vector<PoolingRow>& rows);

/// A published cell checked against the value its own formula gives.
struct AuditFlag {
  std::string cell;
  double printed = 0.0;
  double recomputed = 0.0;
  std::string note;
};

/// Checks a printed row (n_conv, n_milp, n_dups, reductions, efficiencies,
/// costs) and reports every cell that disagrees with its formula.
struct PrintedRow {
  std::string label;
  double n_conv = 0, n_milp = 0, n_dups = 0;
  double reduction_conv_w = 0, reduction_milp_w = 0;
  double efficiency_conv_pct = 0, efficiency_milp_pct = 0;
  double cost_conv = 0, cost_milp = 0;
};

std::vector<AuditFlag> audit_printed_row(const PrintedRow& row);

/// The three published rows (high, moderate, low traffic edges).
std::vector<PrintedRow> published_rows();

/// Capacity arithmetic of an offered pool against a demand (GB).
struct CapacityCheck {
  double pool_gb = 0.0;
  double demand_gb = 0.0;
  double rejected_gb = 0.0;
  double surplus_gb = 0.0;
};

CapacityCheck capacity_check(int servers, double capacity_gb, double demand_gb);

std::string pooling_csv(const std::vector<PoolingRow>& rows);
/// Inverse of pooling_csv.
std::vector<PoolingRow> pooling_from_csv(const std::string& text);
std::string savings_csv(const std::vector<Savings>& rows);
/// hour, then one active-server column per strategy.
std::string plotdata_servers_csv(const std::vector<PoolingRow>& conventional,
                                 const std::vector<PoolingRow>& binpack,
                                 const std::vector<PoolingRow>& dups);
std::string audit_log(const std::vector<AuditFlag>& flags);

}  // namespace ranpool::report
