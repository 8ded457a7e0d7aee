#include <doctest.h>

#include <filesystem>

#include "../support/nn_checks.hpp"
#include "ranpool/data.hpp"
#include "ranpool/nn/mstnet.hpp"

using namespace ranpool;

TEST_CASE("layer gradients agree with central differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& [name, err] : testing::all_gradchecks(20, seed)) {
      CAPTURE(name);
      CAPTURE(seed);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("mae loss") {
  Eigen::Vector3d a(1, 2, 3), b(2, 2, 1);
  CHECK(nn::mae_loss(a, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(nn::mae_loss(Eigen::VectorXd(a), Eigen::VectorXd(Eigen::Vector2d(1, 2))), ShapeError);
}

TEST_CASE("partitions split shared trunk from branches") {
  nn::Model m(testing::toy_mstnet_config(), 3);
  const auto shared = m.params.parameter_count(nn::Partition::kShared);
  const auto traffic = m.params.parameter_count(nn::Partition::kTraffic);
  const auto users = m.params.parameter_count(nn::Partition::kUsers);
  CHECK(shared > 0);
  CHECK(traffic > 0);
  CHECK(users > 0);
  CHECK(shared + traffic + users == m.params.parameter_count());
}

TEST_CASE("scope-restricted axpy leaves other partitions bitwise intact") {
  nn::Model a(testing::toy_mstnet_config(), 1), b(testing::toy_mstnet_config(), 2);
  nn::ModelParams p = a.params;
  p.axpy(0.5, b.params, nn::ParamScope::kSharedBlock);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool touched = p.tensor(i).partition == nn::Partition::kShared;
    const nn::Tensor expected = touched ? nn::Tensor(a.params[i] + 0.5 * b.params[i]) : a.params[i];
    CHECK(p[i] == expected);
  }
  CHECK_THROWS_AS(nn::parse_scope("everything"), ConfigError);
}

TEST_CASE("non-finite activations are reported by layer") {
  nn::Model m(testing::toy_mstnet_config(), 4);
  nn::Sequence x(5, Eigen::MatrixXd::Zero(2, 3));
  x[2](0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    m.net.forward(m.params, x);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("tcn0") != std::string::npos);
  }
}

namespace {

std::vector<data::BaseStation> tiny_corpus() {
  data::SynthConfig c;
  c.stations = 4;
  c.days = 6;
  c.groups = {{8, 20.0, 300.0}, {20, 40.0, 500.0}};
  c.noise_frac = 0.05;
  return data::synthesize(c, 11);
}

}  // namespace

TEST_CASE("training reduces loss and lr 0 freezes parameters") {
  const auto split = data::windowize(tiny_corpus(), 7, 5);
  auto cfg = testing::toy_mstnet_config();
  cfg.q = 7;
  cfg.learning_rate = 0.02;
  nn::Model m(cfg, 9);
  const auto st = nn::Standardizer::fit(split.train);
  const double before = nn::validation_loss(m.net, m.params, split.validation, st);
  Rng rng(1);
  nn::ModelParams p = m.params;
  for (int e = 0; e < 15; ++e) p = nn::train_epoch(m.net, p, split.train, st, rng).params;
  CHECK(nn::validation_loss(m.net, p, split.validation, st) < before);

  cfg.learning_rate = 0.0;
  nn::Model frozen(cfg, 9);
  Rng rng2(1);
  const auto r = nn::train_epoch(frozen.net, frozen.params, split.train, st, rng2);
  CHECK(r.params == frozen.params);
}

TEST_CASE("alternating mode trains both heads") {
  const auto split = data::windowize(tiny_corpus(), 7, 5);
  auto cfg = testing::toy_mstnet_config();
  cfg.q = 7;
  cfg.alternating = true;
  cfg.batch_size = 8;
  nn::Model m(cfg, 2);
  const auto st = nn::Standardizer::fit(split.train);
  Rng rng(3);
  const auto r = nn::train_epoch(m.net, m.params, split.train, st, rng);
  for (auto part : {nn::Partition::kTraffic, nn::Partition::kUsers}) {
    bool changed = false;
    for (std::size_t i = 0; i < r.params.size(); ++i)
      if (r.params.tensor(i).partition == part && r.params[i] != m.params[i]) changed = true;
    CHECK(changed);
  }
}

TEST_CASE("divergent learning rate aborts") {
  const auto split = data::windowize(tiny_corpus(), 7, 5);
  auto cfg = testing::toy_mstnet_config();
  cfg.q = 7;
  cfg.learning_rate = 1e9;
  nn::Model m(cfg, 2);
  const auto st = nn::Standardizer::fit(split.train);
  Rng rng(3);
  nn::ModelParams p = m.params;
  CHECK_THROWS_AS(
      for (int e = 0; e < 5; ++e) p = nn::train_epoch(m.net, p, split.train, st, rng).params,
      NumericalError);
}

TEST_CASE("checkpoint round trip") {
  nn::Model m(testing::toy_mstnet_config(), 5);
  const auto dir = std::filesystem::temp_directory_path() / "ranpool_ckpt_test";
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(m.params, dir / "model", R"({"cluster":"L1_1"})");
  nn::Model other(testing::toy_mstnet_config(), 6);
  CHECK_FALSE(other.params == m.params);
  nn::load_checkpoint(other.params, dir / "model");
  CHECK(other.params == m.params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config json round trip and validation") {
  nn::MstNetConfig c;
  c.q = 9;
  c.branch_lstm = {12};
  c.alternating = true;
  const auto back = nn::mstnet_config_from_json(nn::to_json(c));
  CHECK(back.q == 9);
  CHECK(back.branch_lstm == std::vector<int>{12});
  CHECK(back.alternating);
  CHECK_THROWS_AS(nn::mstnet_config_from_json(R"({"dropout": 1.5})"), ConfigError);
  CHECK_THROWS_AS(nn::mstnet_config_from_json(R"({"q": "x"})"), ConfigError);
}

TEST_CASE("mae hand values") {
  CHECK(nn::mae_loss(Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 1)) == 1.5);
  const Eigen::Vector3d t(0.5, -2, 7);
  CHECK(nn::mae_loss(t, t) == 0.0);
  CHECK(nn::mae_loss((t.array() + 0.25).matrix(), t) == doctest::Approx(0.25));
}

namespace {

nn::Sequence random_input(int q, Eigen::Index batch, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Sequence x(static_cast<std::size_t>(q), Eigen::MatrixXd(batch, 3));
  for (auto& m : x)
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return x;
}

}  // namespace

TEST_CASE("zero parameters give zero outputs") {
  nn::Model m(testing::toy_mstnet_config(), 1);
  for (std::size_t i = 0; i < m.params.size(); ++i) m.params[i].setZero();
  const auto out = m.net.forward(m.params, random_input(5, 4, 2));
  CHECK(out.traffic.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.users.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rows of a batch are evaluated independently") {
  nn::Model m(testing::toy_mstnet_config(), 8);
  const auto x = random_input(5, 32, 3);
  const auto full = m.net.forward(m.params, x);
  nn::Sequence one;
  for (const auto& s : x) one.push_back(s.row(17));
  const auto single = m.net.forward(m.params, one);
  CHECK(std::abs(single.traffic(0) - full.traffic(17)) < 1e-9);
  CHECK(std::abs(single.users(0) - full.users(17)) < 1e-9);
}

TEST_CASE("causal convolution never reads the future") {
  Rng rng(4);
  nn::ModelParams p;
  const auto conv = nn::CausalConv1d::create(p, "c", nn::Partition::kOther, 3, 4, 2, 2, rng);
  auto x = random_input(8, 2, 5);
  const auto base = conv.forward(p, x);
  for (std::size_t t = 0; t < x.size(); ++t) {
    auto xp = x;
    xp[t].array() += 1.0;
    const auto y = conv.forward(p, xp);
    for (std::size_t s = 0; s < t; ++s) CHECK(y[s] == base[s]);
    CHECK(y[t] != base[t]);
  }
}

TEST_CASE("backward is linear in the output gradient and masks unused heads") {
  nn::Model m(testing::toy_mstnet_config(), 6);
  const auto x = random_input(5, 3, 7);
  nn::MstNet::Cache c;
  m.net.forward(m.params, x, c);
  const Eigen::Vector3d dt(0.3, -1.0, 0.5), du(1.0, 0.2, -0.4);
  const auto g1 = m.net.backward(m.params, c, dt, du);
  const auto g2 = m.net.backward(m.params, c, 2.0 * dt, 2.0 * du);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);

  const auto only_traffic = m.net.backward(m.params, c, dt, Eigen::Vector3d::Zero());
  for (std::size_t i = 0; i < only_traffic.size(); ++i)
    if (only_traffic.tensor(i).partition == nn::Partition::kUsers)
      CHECK(only_traffic[i].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tiny net overfits a single sample") {
  data::SequenceSample s;
  s.inputs = random_input(5, 1, 9).front();
  s.inputs.resize(5, 3);
  Rng rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < s.inputs.size(); ++i) s.inputs(i) = n(rng);
  s.target_traffic = 1.3;
  s.target_users = -0.7;
  const std::vector<data::SequenceSample> train{s};

  auto cfg = testing::toy_mstnet_config();
  cfg.dropout = 0.0;
  cfg.learning_rate = 0.01;
  nn::Model m(cfg, 12);
  const nn::Standardizer identity;
  Rng train_rng(1);
  std::vector<double> losses;
  nn::ModelParams p = m.params;
  for (int e = 0; e < 200; ++e) {
    auto r = nn::train_epoch(m.net, std::move(p), train, identity, train_rng);
    p = std::move(r.params);
    losses.push_back(r.loss);
  }
  CHECK(losses.back() < 0.1 * losses.front());
  // Fixed-step SGD on |e_traffic| + |e_users| chatters by about one step once a
  // head reaches its target, so the bound is against epoch 10, not epoch e - 1.
  for (std::size_t e = 11; e < losses.size(); ++e) {
    CAPTURE(e);
    CHECK(losses[e] <= losses[10]);
  }
  CHECK(*std::min_element(losses.begin(), losses.end()) < 0.01 * losses.front());
}

TEST_CASE("training is bitwise deterministic and validation loss recomputes") {
  const auto split = data::windowize(tiny_corpus(), 5, 1);
  nn::Model m(testing::toy_mstnet_config(), 4);
  const auto st = nn::Standardizer::fit(split.train);
  Rng a(77), b(77);
  const auto ra = nn::train_epoch(m.net, m.params, split.train, st, a);
  const auto rb = nn::train_epoch(m.net, m.params, split.train, st, b);
  CHECK(ra.params == rb.params);
  CHECK(ra.loss == rb.loss);

  std::vector<data::SequenceSample> ten(split.validation.begin(), split.validation.begin() + 10);
  const auto batch = nn::make_batch(ten, st);
  const auto out = m.net.forward(ra.params, batch.inputs);
  const double expected =
      (nn::mae_loss(out.traffic, batch.traffic) + nn::mae_loss(out.users, batch.users)) / 2.0;
  CHECK(nn::validation_loss(m.net, ra.params, ten, st) == doctest::Approx(expected).epsilon(1e-12));
}
