#include <doctest.h>

#include <cmath>
#include <random>

#include "ranpool/io.hpp"
#include "ranpool/report.hpp"

using namespace ranpool;
using namespace ranpool::report;

namespace {

std::vector<data::Coordinate> line(int n, double spacing_km) {
  std::vector<data::Coordinate> out;
  for (int i = 0; i < n; ++i) out.push_back({spacing_km * i, 0.0});
  return out;
}

}  // namespace

TEST_CASE("first-fit-decreasing hand trace") {
  const auto sites = line(3, 1.0);
  const Eigen::Vector3d loads(60.0, 100.0, 80.0);
  const auto p = binpack_hour(sites, loads, 192.0, 50.0);
  CHECK(p.servers == 2);
  CHECK(p.lower_bound == 2);
  // 100 and 80 share a host, 60 sits alone.
  CHECK(p.host[1] == p.host[2]);
  CHECK(p.host[0] != p.host[1]);
  CHECK(p.load(p.host[1]) == 180.0);
  CHECK(p.load(p.host[0]) == 60.0);
}

TEST_CASE("binpack degenerate cases") {
  SUBCASE("no pair within reach") {
    const auto sites = line(4, 11.0);
    const Eigen::Vector4d loads(10.0, 0.0, 20.0, 5.0);
    CHECK(binpack_hour(sites, loads, 192.0, 50.0).servers == 3);
  }
  SUBCASE("zero traffic") {
    CHECK(binpack_hour(line(5, 1.0), Eigen::VectorXd::Zero(5), 192.0, 50.0).servers == 0);
  }
  SUBCASE("an overloaded site opens its own DU") {
    const Eigen::Vector2d loads(250.0, 10.0);
    const auto p = binpack_hour(line(2, 1.0), loads, 192.0, 50.0);
    CHECK(p.host[0] == 0);
    CHECK(p.servers == 2);
  }
  SUBCASE("hosts open where they cover the most traffic") {
    // Site 0 at x=0, site 1 at x=9, site 2 at x=18 (km). Only site 1 reaches both ends.
    std::vector<data::Coordinate> sites{{0.0, 0.0}, {9.0, 0.0}, {18.0, 0.0}};
    const Eigen::Vector3d loads(50.0, 10.0, 40.0);
    const auto p = binpack_hour(sites, loads, 192.0, 50.0);
    CHECK(p.servers == 1);
    CHECK(p.host == std::vector<Eigen::Index>{1, 1, 1});
  }
}

TEST_CASE("binpack bounds on random hours") {
  Rng rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 15);
    std::vector<data::Coordinate> sites;
    Eigen::VectorXd loads(n);
    for (int i = 0; i < n; ++i) {
      sites.push_back({30.0 * unit(rng), 30.0 * unit(rng)});
      loads(i) = unit(rng) < 0.2 ? 0.0 : 150.0 * unit(rng);
    }
    const auto p = binpack_hour(sites, loads, 192.0, 50.0);
    CHECK(p.lower_bound <= p.servers);
    CHECK(p.servers <= n);
    for (int i = 0; i < n; ++i) {
      if (loads(i) == 0.0) {
        CHECK(p.host[i] == -1);
        continue;
      }
      REQUIRE(p.host[i] >= 0);
      const auto& a = sites[i];
      const auto& b = sites[p.host[i]];
      CHECK(5.0 * std::hypot(a.x_km - b.x_km, a.y_km - b.y_km) <= 50.0);
    }
    for (int h = 0; h < n; ++h) CHECK(p.load(h) <= 192.0);
    CHECK(p.load.sum() == doctest::Approx(loads.sum()));
  }
}

TEST_CASE("savings formulas") {
  const auto s = savings(kConventional, 108, 27);
  CHECK(s.power_reduction_w == 52650.0);
  CHECK(s.efficiency_pct == 75.0);
  CHECK(s.cost_saved_usd_h == doctest::Approx(6.8445).epsilon(1e-15));
  const auto zero = savings(kConventional, 40, 40);
  CHECK(zero.power_reduction_w == 0.0);
  CHECK(zero.efficiency_pct == 0.0);
  CHECK(zero.cost_saved_usd_h == 0.0);
  CHECK_THROWS_AS(savings(kConventional, 0, 0), ConfigError);
}

TEST_CASE("savings table from hourly rows") {
  const auto mk = [](const char* strategy, std::vector<int> counts) {
    std::vector<PoolingRow> rows;
    for (std::size_t h = 0; h < counts.size(); ++h) {
      PoolingRow r;
      r.strategy = strategy;
      r.hour = static_cast<int>(h);
      r.active_servers = counts[h];
      rows.push_back(r);
    }
    return rows;
  };
  const auto conv = mk(kConventional, {12, 12, 12, 12});
  const auto bp = mk(kBinpack, {2, 3, 4, 3});
  const auto dp = mk(kDups, {1, 2, 4, 3});
  const auto t = savings_table(conv, bp, dp);
  REQUIRE(t.size() == 2);
  CHECK(t[0].reference_servers == 12.0);
  CHECK(t[0].dups_servers == 2.5);
  CHECK(t[0].power_reduction_w == (12.0 - 2.5) * 650.0);
  CHECK(t[1].reference_servers == 3.0);
  CHECK(t[1].efficiency_pct == doctest::Approx(0.5 / 3.0 * 100.0));
  CHECK_THROWS_AS(savings_table(conv, bp, mk(kDups, {1, 2, 4})), ConfigError);
  auto shifted = dp;
  shifted[0].hour = 7;
  CHECK_THROWS_AS(savings_table(conv, bp, shifted), ConfigError);
  const auto csv = savings_csv(t);
  CHECK(csv.rfind("reference,reference_servers,dups_servers,power_reduction_w,efficiency_pct,cost_saved_usd_h\n", 0) == 0);
  const auto plot = plotdata_servers_csv(conv, bp, dp);
  CHECK(plot.find("0,12,2,1,0\n") != std::string::npos);
}

TEST_CASE("audit of the published table") {
  const auto rows = published_rows();
  REQUIRE(rows.size() == 3);
  const auto flags = audit_printed_row(rows[0]);
  const auto find = [&](const std::string& needle) -> const AuditFlag* {
    for (const auto& f : flags)
      if (f.cell.find(needle) != std::string::npos) return &f;
    return nullptr;
  };
  // Consistent cells are not flagged.
  CHECK(find("power reduction vs conventional") == nullptr);
  CHECK(find("efficiency vs conventional") == nullptr);
  CHECK(find("efficiency vs MILP") == nullptr);
  const auto* milp = find("power reduction vs MILP");
  REQUIRE(milp != nullptr);
  CHECK(milp->printed == 44823.0);
  CHECK(milp->recomputed == 27950.0);
  const auto* cost = find("cost vs conventional");
  REQUIRE(cost != nullptr);
  CHECK(cost->printed == 6844.0);
  CHECK(cost->recomputed == doctest::Approx(6.8445).epsilon(1e-15));
  CHECK(audit_log(flags).find("FLAG high power reduction vs MILP (W): printed 44823") != std::string::npos);
}

TEST_CASE("conventional rows and CSV layout") {
  Eigen::MatrixXd traffic(2, 3);
  traffic << 10, 20, 30, 0, 192, 250;
  const auto rows = conventional_rows(traffic, 192.0);
  CHECK(rows[0].active_servers == 3);
  CHECK(rows[0].power_watts == doctest::Approx(650.0 * (2.1 + 0.3 * 60.0 / 192.0)));
  CHECK(rows[1].rejected_gb == 58.0);
  CHECK(rows[1].lower_bound == 3.0);
  const auto csv = pooling_csv(rows);
  CHECK(csv.rfind("strategy,hour,active_servers,power_watts,rejected_gb,mean_latency_us,max_latency_us,lower_bound\n", 0) == 0);
  CHECK(io::parse_csv(csv).rows.size() == 2);
}
