#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "edt/error.hpp"
#include "edt/qlearn.hpp"
#include "oracles.hpp"

using namespace edt;

namespace {

RowVector row(std::initializer_list<double> xs) {
  RowVector r(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) r(i++) = x;
  return r;
}

Dataset stitch_data() {
  const ItemGraph g = default_stitch_graph();
  return generate_offline_dataset(g, default_logging_policies(g), 300, 0);
}

}  // namespace

TEST_CASE("single terminal transition converges to its reward") {
  Matrix s(1, 2);
  s << 1, 0;
  const Trajectory t = Trajectory::from_rewards(s, Matrix::Constant(1, 1, 2), Vector::Constant(1, 1.0));
  for (double gamma : {0.0, 0.5, 1.0}) {
    CqlConfig cfg;
    cfg.alpha = 0.0;
    cfg.gamma = gamma;
    const QTable q = cql_fit(std::span<const Trajectory>(&t, 1), 3, cfg);
    CHECK(std::abs(q.q({1, 0}, 2) - 1.0) < 1e-3);
  }
}

TEST_CASE("alpha zero matches exact value iteration") {
  const ItemGraph g = default_stitch_graph();
  const Dataset d = stitch_data();
  CqlConfig cfg;
  cfg.alpha = 0.0;
  const QTable q = cql_fit(d, cfg);
  const oracle::EmpiricalMdp mdp = oracle::EmpiricalMdp::from(d);
  const StateKey i2{g.id("i2"), g.id("i1")};
  CHECK(std::abs(q.q(i2, g.id("i6")) - 1.0) < 0.05);
  CHECK(std::abs(q.q(i2, g.id("i3"))) < 0.05);
  for (const auto& [sa, edge] : mdp.edges) CHECK(std::abs(q.q(sa.first, sa.second) - mdp.q_star(sa.first, sa.second)) < 1e-2);
}

TEST_CASE("conservatism never raises in-data values") {
  const Dataset d = stitch_data();
  CqlConfig plain;
  plain.alpha = 0.0;
  const QTable q0 = cql_fit(d, plain);
  for (double alpha : {0.5, 1.0, 2.0}) {
    CqlConfig cons;
    cons.alpha = alpha;
    const QTable q1 = cql_fit(d, cons);
    for (const auto& s : q0.states())
      for (int a : q0.seen_actions(s)) CHECK(q1.q(s, a) <= q0.q(s, a) + 0.05);
  }
}

TEST_CASE("unknown states default to zero") {
  const QTable q = cql_fit(stitch_data(), CqlConfig{});
  CHECK(q.q({99, 98}, 1) == 0.0);
  CHECK(q.greedy_value({99, 98}) == 0.0);
  const StateValue v = state_value(q, row({1, 0, 0, 0, 0, 0, 0, 0}), {99, 98});
  CHECK_FALSE(v.covered);
  CHECK(v.value == 0.0);
}

TEST_CASE("state value under action distributions") {
  QTable q(2);
  const int idx = q.insert({5, 0}, 1);
  q.insert({5, 0}, 2);
  q.at(idx, 1) = 0.0;
  q.at(idx, 2) = 2.0;
  CHECK(state_value(q, row({0.5, 0.5}), {5, 0}).value == 1.0);
  CHECK(state_value(q, row({0.0, 1.0}), {5, 0}).value == 2.0);
  CHECK(state_value(q, row({0.0, 1.0}), {5, 0}).covered);
  CHECK_THROWS(state_value(q, row({0.5, 0.6}), {5, 0}));

  QTable single(1);
  single.at(single.insert({3, 0}, 1), 1) = 3.0;
  CHECK(state_value(single, row({1.0}), {3, 0}).value == 3.0);
}

TEST_CASE("greedy value is restricted to seen actions") {
  QTable q(3);
  const int idx = q.insert({1, 0}, 2);
  q.at(idx, 2) = -0.5;
  CHECK(q.greedy_value({1, 0}) == -0.5);
  CHECK(q.greedy_action({1, 0}) == 2);
  CHECK_FALSE(q.supported({1, 0}, 3));
}

TEST_CASE("fit is deterministic and round-trips through text") {
  CqlConfig cfg;
  cfg.sweeps = 200;
  const QTable a = cql_fit(stitch_data(), cfg), b = cql_fit(stitch_data(), cfg);
  CHECK(a == b);
  std::stringstream ss;
  a.save(ss);
  CHECK(QTable::load(ss) == a);
  std::stringstream bad("edt-qtable 9\n");
  CHECK_THROWS_AS(QTable::load(bad), FormatError);
}

TEST_CASE("config and data validation") {
  CqlConfig cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.alpha = -1;
  CHECK_THROWS(cfg.validate());
  CHECK_THROWS(cql_fit(Dataset{}, CqlConfig{}));
}
