#include "ranpool/report.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <sstream>

#include "ranpool/dups/environment.hpp"
#include "ranpool/io.hpp"

namespace ranpool::report {

std::vector<PoolingRow> conventional_rows(const Eigen::MatrixXd& traffic, double capacity_gb) {
  if (!(capacity_gb > 0.0)) throw ConfigError("conventional_rows: capacity must be positive");
  std::vector<PoolingRow> rows;
  for (Eigen::Index h = 0; h < traffic.rows(); ++h) {
    PoolingRow row;
    row.strategy = kConventional;
    row.hour = static_cast<int>(h);
    row.active_servers = static_cast<int>(traffic.cols());
    for (Eigen::Index j = 0; j < traffic.cols(); ++j) {
      const double load = std::min(traffic(h, j), capacity_gb);
      row.power_watts += dups::server_watts(load / capacity_gb);
      row.rejected_gb += traffic(h, j) - load;
    }
    row.lower_bound = lower_bound_servers(traffic.row(h).sum(), capacity_gb);
    rows.push_back(row);
  }
  return rows;
}

BinpackHour binpack_hour(const std::vector<data::Coordinate>& sites, const Eigen::VectorXd& traffic,
                         double capacity_gb, double latency_bound_us) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  if (traffic.size() != n) throw ShapeError("binpack_hour: traffic needs one value per site");
  if (!(capacity_gb > 0.0)) throw ConfigError("binpack_hour: capacity must be positive");
  BinpackHour out;
  out.host.assign(sites.size(), -1);
  out.load = Eigen::VectorXd::Zero(n);
  out.lower_bound = lower_bound_servers(traffic.sum(), capacity_gb);

  const auto in_reach = [&](Eigen::Index a, Eigen::Index b) {
    return dups::fh_latency(sites[a], sites[b]) <= latency_bound_us;
  };
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (traffic(i) > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return traffic(a) > traffic(b); });

  std::vector<Eigen::Index> open;
  std::vector<bool> is_open(sites.size(), false);
  std::vector<bool> placed(sites.size(), false);
  for (Eigen::Index s : order) {
    if (placed[s]) continue;  // already carried by its own newly opened host
    Eigen::Index chosen = -1;
    if (traffic(s) > capacity_gb) {
      chosen = s;  // cannot share; its own DU carries it
    } else {
      for (Eigen::Index h : open) {
        if (in_reach(s, h) && out.load(h) + traffic(s) <= capacity_gb) {
          chosen = h;
          break;
        }
      }
      if (chosen < 0) {
        // A new host also carries its own unplaced traffic, so it qualifies
        // only if that and this site fit together; `s` itself always does.
        double best = -1.0;
        for (Eigen::Index c = 0; c < n; ++c) {
          if (is_open[c] || !in_reach(s, c)) continue;
          const double own = (c == s || placed[c]) ? 0.0 : traffic(c);
          if (own + traffic(s) > capacity_gb) continue;
          double cover = 0.0;
          for (Eigen::Index u = 0; u < n; ++u) {
            if (!placed[u] && traffic(u) > 0.0 && in_reach(u, c)) cover += traffic(u);
          }
          if (cover > best || (cover == best && c == s)) {
            best = cover;
            chosen = c;
          }
        }
      }
    }
    if (!is_open[chosen]) {
      is_open[chosen] = true;
      open.push_back(chosen);
      if (chosen != s && !placed[chosen] && traffic(chosen) > 0.0) {
        out.load(chosen) += traffic(chosen);
        out.host[chosen] = chosen;
        placed[chosen] = true;
      }
    }
    out.load(chosen) += traffic(s);
    out.host[s] = chosen;
    placed[s] = true;
  }
  out.servers = static_cast<int>(open.size());
  return out;
}

std::vector<PoolingRow> binpack_baseline(const std::vector<data::Coordinate>& sites,
                                         const Eigen::MatrixXd& traffic, double capacity_gb,
                                         double latency_bound_us) {
  std::vector<PoolingRow> rows;
  for (Eigen::Index h = 0; h < traffic.rows(); ++h) {
    const auto packed = binpack_hour(sites, traffic.row(h).transpose(), capacity_gb, latency_bound_us);
    PoolingRow row;
    row.strategy = kBinpack;
    row.hour = static_cast<int>(h);
    row.active_servers = packed.servers;
    row.lower_bound = packed.lower_bound;
    double latency_sum = 0.0;
    int flows = 0;
    std::vector<bool> on(sites.size(), false);
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const auto host = packed.host[s];
      if (host < 0) continue;
      on[host] = true;
      if (host != static_cast<Eigen::Index>(s)) {
        const double l = dups::fh_latency(sites[s], sites[host]);
        latency_sum += l;
        row.max_latency_us = std::max(row.max_latency_us, l);
        ++flows;
      }
    }
    for (std::size_t s = 0; s < sites.size(); ++s) {
      if (on[s]) row.power_watts += dups::server_watts(std::min(packed.load(s) / capacity_gb, 1.0));
    }
    row.mean_latency_us = flows > 0 ? latency_sum / flows : 0.0;
    rows.push_back(row);
  }
  return rows;
}

Savings savings(const std::string& reference, double reference_servers, double dups_servers) {
  if (!(reference_servers > 0.0)) throw ConfigError("savings: reference server count must be positive");
  Savings s;
  s.reference = reference;
  s.reference_servers = reference_servers;
  s.dups_servers = dups_servers;
  s.power_reduction_w = (reference_servers - dups_servers) * dups::kServerWatts;
  s.efficiency_pct = (reference_servers - dups_servers) / reference_servers * 100.0;
  s.cost_saved_usd_h = s.power_reduction_w * kUsdPerKwh / 1000.0;
  return s;
}

double average_servers(const std::vector<PoolingRow>& rows) {
  if (rows.empty()) throw ConfigError("average_servers: no rows");
  double s = 0.0;
  for (const auto& r : rows) s += r.active_servers;
  return s / static_cast<double>(rows.size());
}

namespace {

void require_aligned(const std::vector<PoolingRow>& a, const std::vector<PoolingRow>& b,
                     const char* what) {
  if (a.size() != b.size()) throw ConfigError(std::string("savings_table: hour ranges differ (") + what + ")");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].hour != b[i].hour)
      throw ConfigError(std::string("savings_table: hour ranges differ (") + what + ")");
  }
}

}  // namespace

std::vector<Savings> savings_table(const std::vector<PoolingRow>& conventional,
                                   const std::vector<PoolingRow>& binpack,
                                   const std::vector<PoolingRow>& dups) {
  require_aligned(conventional, dups, "conventional vs dups");
  require_aligned(binpack, dups, "binpack vs dups");
  const double n_dups = average_servers(dups);
  return {savings(kConventional, average_servers(conventional), n_dups),
          savings(kBinpack, average_servers(binpack), n_dups)};
}

std::vector<AuditFlag> audit_printed_row(const PrintedRow& row) {
  std::vector<AuditFlag> flags;
  const auto check = [&](const std::string& cell, double printed, double recomputed,
                         double tolerance, const std::string& note) {
    if (std::abs(printed - recomputed) > tolerance) flags.push_back({row.label + " " + cell, printed, recomputed, note});
  };
  const Savings conv = savings(kConventional, row.n_conv, row.n_dups);
  const Savings milp = savings("milp", row.n_milp, row.n_dups);
  // Percentages are printed to one decimal, so a 0.05 slack covers rounding.
  check("power reduction vs conventional (W)", row.reduction_conv_w, conv.power_reduction_w, 0.5,
        "(n_conv - n_dups) x 650");
  check("power reduction vs MILP (W)", row.reduction_milp_w, milp.power_reduction_w, 0.5,
        "(n_milp - n_dups) x 650");
  check("efficiency vs conventional (%)", row.efficiency_conv_pct, conv.efficiency_pct, 0.05,
        "(n_conv - n_dups) / n_conv x 100");
  check("efficiency vs MILP (%)", row.efficiency_milp_pct, milp.efficiency_pct, 0.05,
        "(n_milp - n_dups) / n_milp x 100");
  check("cost vs conventional (USD/h)", row.cost_conv, conv.cost_saved_usd_h, 0.005,
        "p x 0.13 / 1000 with p the printed power reduction would give " +
            io::fmt(row.reduction_conv_w * kUsdPerKwh / 1000.0));
  check("cost vs MILP (USD/h)", row.cost_milp, milp.cost_saved_usd_h, 0.005,
        "p x 0.13 / 1000 with p the printed power reduction would give " +
            io::fmt(row.reduction_milp_w * kUsdPerKwh / 1000.0));
  return flags;
}

std::vector<PrintedRow> published_rows() {
  return {
      {"high", 108, 70, 27, 52650, 44823, 75, 61.4, 6844, 5827},
      {"moderate", 89, 63, 24, 42250, 40276, 74.1, 57.1, 5492, 5235},
      {"low", 42, 25, 11, 20150, 15589, 73.8, 56.0, 2619, 2026},
  };
}

CapacityCheck capacity_check(int servers, double capacity_gb, double demand_gb) {
  if (servers < 0) throw ConfigError("capacity_check: servers must be >= 0");
  CapacityCheck c;
  c.pool_gb = servers * capacity_gb;
  c.demand_gb = demand_gb;
  c.rejected_gb = std::max(0.0, demand_gb - c.pool_gb);
  c.surplus_gb = std::max(0.0, c.pool_gb - demand_gb);
  return c;
}

std::string pooling_csv(const std::vector<PoolingRow>& rows) {
  io::CsvWriter w({"strategy", "hour", "active_servers", "power_watts", "rejected_gb",
                   "mean_latency_us", "max_latency_us", "lower_bound"});
  for (const auto& r : rows) {
    w.row({r.strategy, std::to_string(r.hour), std::to_string(r.active_servers), io::fmt(r.power_watts),
           io::fmt(r.rejected_gb), io::fmt(r.mean_latency_us), io::fmt(r.max_latency_us),
           io::fmt(r.lower_bound)});
  }
  return w.str();
}

std::vector<PoolingRow> pooling_from_csv(const std::string& text) {
  const auto table = io::parse_csv(text);
  const std::size_t c_strategy = table.column("strategy");
  const std::size_t c_hour = table.column("hour");
  const std::size_t c_active = table.column("active_servers");
  const std::size_t c_power = table.column("power_watts");
  const std::size_t c_rejected = table.column("rejected_gb");
  const std::size_t c_mean = table.column("mean_latency_us");
  const std::size_t c_max = table.column("max_latency_us");
  const std::size_t c_bound = table.column("lower_bound");
  std::vector<PoolingRow> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    try {
      PoolingRow row;
      row.strategy = f.at(c_strategy);
      row.hour = std::stoi(f.at(c_hour));
      row.active_servers = std::stoi(f.at(c_active));
      row.power_watts = std::stod(f.at(c_power));
      row.rejected_gb = std::stod(f.at(c_rejected));
      row.mean_latency_us = std::stod(f.at(c_mean));
      row.max_latency_us = std::stod(f.at(c_max));
      row.lower_bound = std::stod(f.at(c_bound));
      rows.push_back(std::move(row));
    } catch (const std::logic_error& e) {
      throw ParseError("pooling csv: bad row " + std::to_string(r + 2) + ": " + e.what());
    }
  }
  return rows;
}

std::string savings_csv(const std::vector<Savings>& rows) {
  io::CsvWriter w({"reference", "reference_servers", "dups_servers", "power_reduction_w",
                   "efficiency_pct", "cost_saved_usd_h"});
  for (const auto& s : rows) {
    w.row({s.reference, io::fmt(s.reference_servers), io::fmt(s.dups_servers),
           io::fmt(s.power_reduction_w), io::fmt(s.efficiency_pct), io::fmt(s.cost_saved_usd_h)});
  }
  return w.str();
}

std::string plotdata_servers_csv(const std::vector<PoolingRow>& conventional,
                                 const std::vector<PoolingRow>& binpack,
                                 const std::vector<PoolingRow>& dups) {
  require_aligned(conventional, dups, "conventional vs dups");
  require_aligned(binpack, dups, "binpack vs dups");
  io::CsvWriter w({"hour", "conventional", "binpack", "dups", "lower_bound"});
  for (std::size_t i = 0; i < dups.size(); ++i) {
    w.row({std::to_string(dups[i].hour), std::to_string(conventional[i].active_servers),
           std::to_string(binpack[i].active_servers), std::to_string(dups[i].active_servers),
           io::fmt(dups[i].lower_bound)});
  }
  return w.str();
}

std::string audit_log(const std::vector<AuditFlag>& flags) {
  std::ostringstream out;
  for (const auto& f : flags) {
    out << "FLAG " << f.cell << ": printed " << io::fmt(f.printed) << ", formula gives "
        << io::fmt(f.recomputed) << " (" << f.note << ")\n";
  }
  return out.str();
}

}  // namespace ranpool::report
