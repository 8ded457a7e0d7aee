#include <doctest.h>

#include <set>
#include <sstream>

#include "ranpool/clustering.hpp"
#include "ranpool/data.hpp"

using namespace ranpool;
using namespace ranpool::data;

namespace {

std::string csv_header() { return "time,edge_id,bs_id,x_km,y_km,users,traffic_gb\n"; }

std::string complete_csv(int stations, int hours) {
  std::ostringstream os;
  os << csv_header();
  for (int s = 0; s < stations; ++s)
    for (int t = 0; t < hours; ++t)
      os << t << ",1," << s << ",0.5," << s << "," << 10 + t << "," << 2.5 * t + s << "\n";
  return os.str();
}

}  // namespace

TEST_CASE("ingest complete stations") {
  const auto st = ingest_csv_text(complete_csv(2, 24));
  REQUIRE(st.size() == 2);
  for (const auto& b : st) {
    CHECK(b.hours() == 24);
    CHECK(b.users.size() == 24);
    CHECK(b.edge_id.value() == 1);
  }
  CHECK(st[1].traffic(3) == 2.5 * 3 + 1);
  CHECK(st[1].coordinate.y_km == 1.0);
}

TEST_CASE("ingest interpolates a missing hour") {
  std::ostringstream os;
  os << csv_header();
  for (int t = 0; t < 8; ++t) {
    if (t == 5) continue;
    const double gb = t == 4 ? 10.0 : t == 6 ? 20.0 : 1.0;
    os << t << ",," << 7 << ",0,0,3," << gb << "\n";
  }
  const auto st = ingest_csv_text(os.str());
  REQUIRE(st.size() == 1);
  CHECK(st[0].hours() == 8);
  CHECK(st[0].traffic(5) == 15.0);
  CHECK_FALSE(st[0].edge_id.has_value());
}

TEST_CASE("ingest errors name the line") {
  std::string text = complete_csv(1, 10);
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (n == 7) line = line.substr(0, line.rfind(',')) + ",abc";
    out << line << "\n";
  }
  try {
    ingest_csv_text(out.str());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_csv_text("time,bs_id\n1,2\n"), ParseError);
  CHECK_THROWS_AS(ingest_csv_text(csv_header() + "0,,1,0,0,,\n1,,1,0,0,,\n"), ParseError);
  CHECK_THROWS_AS(ingest_csv_text(csv_header() + "0,,1,0,0,1,1\n0,,1,0,0,1,1\n"), ParseError);
  CHECK_THROWS_AS(ingest_csv("/nonexistent/file.csv"), ParseError);
}

TEST_CASE("csv round trip") {
  SynthConfig c;
  c.stations = 3;
  c.days = 2;
  c.groups = {{5, 10, 100}};
  c.noise_frac = 0.1;
  const auto st = synthesize(c, 4);
  const auto back = ingest_csv_text(to_csv(st));
  REQUIRE(back.size() == st.size());
  for (std::size_t i = 0; i < st.size(); ++i) {
    CHECK(back[i].traffic == st[i].traffic);
    CHECK(back[i].users == st[i].users);
    CHECK(back[i].coordinate.x_km == st[i].coordinate.x_km);
  }
}

TEST_CASE("interpolation stays within neighbours") {
  const std::vector<std::optional<double>> v{std::nullopt, 4.0, std::nullopt, std::nullopt, 1.0,
                                             std::nullopt};
  const auto out = interpolate_gaps(v);
  CHECK(out(0) == 4.0);
  CHECK(out(5) == 1.0);
  CHECK(out(2) == doctest::Approx(3.0));
  CHECK(out(3) == doctest::Approx(2.0));
  for (int i = 1; i <= 4; ++i) {
    CHECK(out(i) <= 4.0);
    CHECK(out(i) >= 1.0);
  }
  CHECK_THROWS_AS(interpolate_gaps({std::nullopt, std::nullopt}), ParseError);
}

TEST_CASE("scale to 5g capacity") {
  BaseStation at_cap;
  at_cap.id = 1;
  at_cap.traffic = Eigen::VectorXd::LinSpaced(24, 0.0, 1800.0);  // 1800 GB/h = 4 Gbps
  at_cap.users = Eigen::VectorXd::Ones(24);
  BaseStation half = at_cap;
  half.id = 2;
  half.traffic = Eigen::VectorXd::LinSpaced(24, 0.0, 900.0);  // 2 Gbps peak
  BaseStation zero = at_cap;
  zero.id = 3;
  zero.traffic.setZero();

  const auto r = scale_to_5g({at_cap, half, zero});
  CHECK((r.stations[0].traffic - at_cap.traffic).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((r.stations[1].traffic - 2.0 * half.traffic).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.stations[1].users == half.users);
  CHECK(r.unscaled == std::vector<StationId>{3});

  // Oracle: each scaled peak, converted to a rate, equals the capacity.
  SynthConfig c;
  c.stations = 3;
  c.days = 2;
  c.groups = {{3, 10, 100}, {12, 40, 100}, {20, 70, 100}};
  c.noise_frac = 0.05;
  const auto scaled = scale_to_5g(synthesize(c, 1), 4.0);
  for (const auto& b : scaled.stations) CHECK(gb_per_hour_to_gbps(b.traffic.maxCoeff()) == doctest::Approx(4.0).epsilon(1e-12));
  const auto again = scale_to_5g(scaled.stations, 4.0);
  for (std::size_t i = 0; i < again.stations.size(); ++i)
    CHECK((again.stations[i].traffic - scaled.stations[i].traffic).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(scale_to_5g(scaled.stations, 0.0), ConfigError);
}

TEST_CASE("noise-free synthesis peaks at the group hour") {
  SynthConfig c;
  c.stations = 10;
  c.days = 3;
  c.groups = {{10, 30, 400}, {20, 50, 500}};
  const auto st = synthesize(c, 9);
  for (int s = 0; s < c.stations; ++s) {
    const int expected = c.groups[static_cast<std::size_t>(synth_group_of(c, s))].peak_hour;
    CHECK(clustering::peak_hour(st[static_cast<std::size_t>(s)].daily_profile()) == expected);
    const auto& p = st[static_cast<std::size_t>(s)].coordinate;
    CHECK(p.x_km >= c.bbox_km[0]);
    CHECK(p.x_km <= c.bbox_km[2]);
  }
  CHECK(to_csv(synthesize(c, 9)) == to_csv(st));
  CHECK(to_csv(synthesize(c, 10)) != to_csv(st));
}

TEST_CASE("noisy synthesis keeps most peaks") {
  SynthConfig c;
  c.stations = 30;
  c.days = 7;
  c.groups = {{10, 30, 400}, {20, 50, 500}};
  c.noise_frac = 0.10;
  const auto st = synthesize(c, 21);
  int match = 0;
  for (int s = 0; s < c.stations; ++s) {
    // Oracle argmax on the raw series, hour by hour, summed over days.
    const auto& tr = st[static_cast<std::size_t>(s)].traffic;
    std::array<double, 24> sum{};
    for (Eigen::Index t = 0; t < tr.size(); ++t) sum[static_cast<std::size_t>(t % 24)] += tr(t);
    const auto best = std::max_element(sum.begin(), sum.end()) - sum.begin();
    if (best == c.groups[static_cast<std::size_t>(synth_group_of(c, s))].peak_hour) ++match;
  }
  CHECK(match >= 27);
}

TEST_CASE("synthesis configuration errors") {
  SynthConfig c;
  c.days = 2;
  c.groups = {{1, 1, 1}};
  CHECK_THROWS_AS(synthesize(c, 1), ConfigError);
  c.stations = 2;
  c.days = 0;
  CHECK_THROWS_AS(synthesize(c, 1), ConfigError);
  CHECK_THROWS_AS(synth_config_from_json("{\"stations\": \"x\"}"), ConfigError);
  const auto parsed = synth_config_from_json(
      R"({"stations": 4, "days": 2, "groups": [{"peak_hour": 3, "mean_gb": 5, "mean_users": 9}],
          "noise_frac": 0.2, "bbox_km": [0, 0, 5, 6], "seed": 3})");
  CHECK(parsed.stations == 4);
  CHECK(parsed.groups.at(0).peak_hour == 3);
  CHECK(parsed.bbox_km[3] == 6.0);
  CHECK(parsed.seed == 3);
}

TEST_CASE("windowing counts, targets and splits") {
  BaseStation b;
  b.id = 4;
  b.traffic = Eigen::VectorXd::LinSpaced(24, 1.0, 24.0);  // s1..s24
  b.users = 2.0 * b.traffic;
  const auto w = station_windows(b, 4);
  CHECK(w.size() == 20);
  CHECK(w[0].inputs.col(0).transpose() == Eigen::RowVector4d(1, 2, 3, 4));
  CHECK(w[0].target_traffic == 5.0);
  CHECK(w[0].target_users == 10.0);
  CHECK(w[1].inputs(0, 0) == 2.0);
  CHECK(w[1].target_traffic == 6.0);
  CHECK(w[3].inputs(2, 2) == 5.0);  // hour-of-day feature
  CHECK_THROWS_AS(station_windows(b, 24), ConfigError);

  // 5 stations of 24 hours at q = 4 gives exactly 100 samples.
  std::vector<BaseStation> five(5, b);
  for (int i = 0; i < 5; ++i) five[static_cast<std::size_t>(i)].id = i;
  const auto split = windowize(five, 4, 3);
  CHECK(split.train.size() == 70);
  CHECK(split.validation.size() == 15);
  CHECK(split.test.size() == 15);

  std::set<std::pair<StationId, Eigen::Index>> seen;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    for (const auto& s : *part) seen.insert({s.station, s.start});
  CHECK(seen.size() == 100);

  const auto again = windowize(five, 4, 3);
  for (std::size_t i = 0; i < again.train.size(); ++i) CHECK(again.train[i].start == split.train[i].start);
}
