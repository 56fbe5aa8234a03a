#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "edt/error.hpp"
#include "edt/trajectory.hpp"

using namespace edt;
namespace fs = std::filesystem;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Trajectory ramp(Index T, double reward = 1.0) {
  Matrix s(T, 1), a(T, 1);
  for (Index t = 0; t < T; ++t) {
    s(t, 0) = static_cast<double>(t);
    a(t, 0) = static_cast<double>(t + 100);
  }
  return Trajectory::from_rewards(s, a, Vector::Constant(T, reward));
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("edt_traj_" + name)).string();
}

}  // namespace

TEST_CASE("reward_to_go") {
  CHECK(reward_to_go(vec({1, 2, 3})) == vec({6, 5, 3}));
  CHECK(reward_to_go(Vector(0)).size() == 0);
  CHECK(reward_to_go(vec({0, 0, 0, 0})) == vec({0, 0, 0, 0}));
  // Templated on scalar.
  Eigen::VectorXf f(2);
  f << 1.5f, 2.0f;
  CHECK(reward_to_go(f)(0) == 3.5f);
}

TEST_CASE("fresh trajectories are rtg-consistent") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  Vector r(12);
  for (Index i = 0; i < r.size(); ++i) r(i) = u(rng);
  const Trajectory t = Trajectory::from_rewards(Matrix::Zero(12, 1), Matrix::Zero(12, 1), r);
  for (Index i = 0; i + 1 < t.length(); ++i) CHECK(t.rtg(i) - t.rtg(i + 1) == doctest::Approx(r(i)));
  CHECK(t.rtg(11) == r(11));
}

TEST_CASE("window at a single-step trajectory is left padded") {
  const Trajectory t = ramp(1);
  std::mt19937_64 rng(0);
  const ContextWindow w = sample_subsequence(t, 2, rng);
  CHECK(w.size() == 2);
  CHECK_FALSE(w.mask(0));
  CHECK(w.mask(1));
  CHECK(w.timesteps(0) == kPadTimestep);
  CHECK(w.timesteps(1) == 0);
  CHECK(w.rtg(0) == 0.0);
  CHECK(w.states.row(0).isZero());
}

TEST_CASE("window slicing") {
  const Trajectory t = ramp(10);
  const ContextWindow w = window_at(t, 5, 2);
  CHECK(w.timesteps(0) == 4);
  CHECK(w.timesteps(1) == 5);
  CHECK(w.rtg(0) == t.rtg(4));
  CHECK(w.rtg(1) == t.rtg(5));
  CHECK(w.states(1, 0) == 5.0);
  CHECK(w.actions(0, 0) == 104.0);
  CHECK_THROWS(window_at(t, 10, 2));
}

TEST_CASE("window end is uniform") {
  const Trajectory t = ramp(10);
  std::mt19937_64 rng(17);
  std::vector<int> counts(10, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_subsequence(t, 2, rng).end)];
  for (int c : counts) CHECK(std::abs(c / double(n) - 0.1) <= 0.02);
}

TEST_CASE("window properties over random draws") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Index T = 1 + static_cast<Index>(rng() % 9);
    const int K = 1 + static_cast<int>(rng() % 5);
    const Trajectory t = ramp(T);
    const ContextWindow w = sample_subsequence(t, K, rng);
    REQUIRE(w.size() == K);
    int last = -2;
    for (Index i = 0; i < K; ++i) {
      const Index abs_t = w.end - (K - 1 - i);
      CHECK(w.mask(i) == (abs_t >= 0));
      if (w.mask(i)) {
        CHECK(w.timesteps(i) == abs_t);
        if (last >= 0) CHECK(w.timesteps(i) == last + 1);
        last = w.timesteps(i);
      }
    }
  }
}

TEST_CASE("non-positive context length is an error") {
  std::mt19937_64 rng(0);
  CHECK_THROWS(sample_subsequence(ramp(3), 0, rng));
}

TEST_CASE("sampling probabilities") {
  std::vector<Trajectory> buf{ramp(2), ramp(3), ramp(5)};
  const Vector p = trajectory_sampling_probs(buf);
  CHECK(p(0) == doctest::Approx(0.2));
  CHECK(p(1) == doctest::Approx(0.3));
  CHECK(p(2) == doctest::Approx(0.5));
  CHECK(std::abs(p.sum() - 1.0) <= 1e-12);

  CHECK(trajectory_sampling_probs({ramp(4)})(0) == 1.0);
  const Vector q = trajectory_sampling_probs({ramp(3), ramp(3), ramp(3), ramp(3)});
  for (Index i = 0; i < 4; ++i) CHECK(q(i) == 0.25);
  CHECK_THROWS(trajectory_sampling_probs({}));
}

TEST_CASE("rating ingestion threshold is strict") {
  std::vector<RatingEvent> log{{1, 10, 4.0, 1}, {1, 20, 3.0, 2}, {1, 30, 3.75, 3}, {2, 10, 5.0, 1}};
  const Dataset d = ingest_ratings(log, {});
  REQUIRE(d.size() == 2);
  CHECK(d.trajectories[0].rewards == vec({1, 0, 0}));
  CHECK(d.trajectories[1].rewards == vec({1}));
}

TEST_CASE("rating ingestion orders by time and windows clicked items") {
  std::vector<RatingEvent> log{{7, 30, 5.0, 3}, {7, 10, 5.0, 1}, {7, 20, 1.0, 2}, {7, 40, 5.0, 4}};
  IngestOptions opts;
  opts.window = 2;
  const Dataset d = ingest_ratings(log, opts);
  const Trajectory& t = d.trajectories[0];
  // Dense ids: 10->1, 20->2, 30->3, 40->4.
  CHECK(t.actions.col(0) == vec({1, 2, 3, 4}));
  CHECK(t.states.row(0).isZero());
  CHECK(t.states(2, 0) == 1.0);
  CHECK(t.states(2, 1) == 0.0);
  CHECK(t.states(3, 0) == 3.0);
  CHECK(t.states(3, 1) == 1.0);
  CHECK(d.state_space.columns == 2);
}

TEST_CASE("rating outside range is an error") {
  CHECK_THROWS(ingest_ratings({{1, 1, 6.0, 0}}, {}));
  CHECK_THROWS(ingest_ratings({{1, 1, -1.0, 0}}, {}));
}

TEST_CASE("dataset round trip") {
  Dataset d;
  d.state_space = {SpaceDescriptor::Kind::kContinuous, 0, 1};
  d.action_space = {SpaceDescriptor::Kind::kContinuous, 0, 1};
  d.provenance = "unit";
  d.trajectories = {ramp(3, 0.1), ramp(1, 1.0 / 3.0), ramp(4, -2.5)};
  d.trajectories[1].rtg_relabel = vec({7.25});
  const std::string path = temp_path("rt.jsonl");
  save_dataset(path, d);
  const Dataset back = load_dataset(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back.trajectories[i] == d.trajectories[i]);
  CHECK(back.state_space == d.state_space);
  CHECK(back.manifest().count == 3);
  fs::remove(path);
  fs::remove(manifest_path(path));
}

TEST_CASE("empty dataset round trip") {
  const std::string path = temp_path("empty.jsonl");
  save_dataset(path, Dataset{});
  CHECK(load_dataset(path).empty());
  fs::remove(path);
  fs::remove(manifest_path(path));
}

TEST_CASE("mismatched lengths name the trajectory") {
  Dataset d;
  d.state_space = {SpaceDescriptor::Kind::kContinuous, 0, 1};
  d.action_space = {SpaceDescriptor::Kind::kContinuous, 0, 1};
  d.trajectories = {ramp(2), ramp(2)};
  const std::string path = temp_path("bad.jsonl");
  save_dataset(path, d);
  std::ifstream is(path);
  std::string header, first, second;
  std::getline(is, header);
  std::getline(is, first);
  std::getline(is, second);
  is.close();
  const auto pos = second.find("\"rewards\":[");
  REQUIRE(pos != std::string::npos);
  second.insert(pos + 11, "0.0,");
  std::ofstream(path) << header << '\n' << first << '\n' << second << '\n';
  try {
    load_dataset(path);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    INFO(e.what());
    CHECK(std::string(e.what()).find("trajectory 1") != std::string::npos);
  }
  fs::remove(path);
  fs::remove(manifest_path(path));
}
