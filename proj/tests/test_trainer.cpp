#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "edt/error.hpp"
#include "edt/trainer.hpp"

using namespace edt;

namespace {

// Constant-state trajectory tagged by `tag`, with the given total return.
Trajectory tagged(double tag, Index T, double ret = 0.0) {
  Vector r = Vector::Zero(T);
  r(T - 1) = ret;
  return Trajectory::from_rewards(Matrix::Constant(T, 1, tag), Matrix::Zero(T, 1), r);
}

Dataset stitch_data(int n, std::uint64_t seed = 0) {
  const ItemGraph g = default_stitch_graph();
  return generate_offline_dataset(g, default_logging_policies(g), n, seed);
}

TrainConfig quick() {
  TrainConfig cfg;
  cfg.pretrain_iterations = 20;
  cfg.iterations = 5;
  cfg.rounds = 2;
  cfg.batch_size = 4;
  cfg.cql.sweeps = 200;
  cfg.refit_sweeps = 50;
  return cfg;
}

PolicyConfig small() {
  PolicyConfig pc;
  pc.width = 16;
  return pc;
}

}  // namespace

TEST_CASE("buffer evicts the oldest beyond capacity") {
  ReplayBuffer buf(5);
  for (int i = 0; i < 5; ++i) CHECK(buf.insert(tagged(i, 1)) == 0);
  CHECK(buf.insert(tagged(5, 1)) == 1);
  CHECK(buf.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(buf.at(i).states(0, 0) == static_cast<double>(i + 1));
}

TEST_CASE("buffer keeps the most recent insertions in order") {
  ReplayBuffer buf(4);
  for (int i = 0; i < 23; ++i) buf.insert(tagged(i, 1));
  for (std::size_t i = 0; i < 4; ++i) CHECK(buf.at(i).states(0, 0) == 19.0 + static_cast<double>(i));
}

TEST_CASE("protected seeds survive eviction") {
  ReplayBuffer buf(3, true);
  buf.insert(tagged(0, 1), true);
  for (int i = 1; i < 10; ++i) buf.insert(tagged(i, 1));
  CHECK(buf.size() == 3);
  CHECK(buf.is_seed(0));
  CHECK(buf.at(0).states(0, 0) == 0.0);
  CHECK(buf.at(2).states(0, 0) == 9.0);
}

TEST_CASE("top-N initialisation") {
  Dataset d;
  d.trajectories = {tagged(0, 1, 0.0), tagged(1, 1, 1.0), tagged(2, 1, 0.0)};
  ReplayBuffer one = init_buffer(d, 1, 8);
  REQUIRE(one.size() == 1);
  CHECK(one.at(0).states(0, 0) == 1.0);

  CHECK(init_buffer(d, 3, 8).size() == 3);

  Dataset flat;
  flat.trajectories = {tagged(0, 1), tagged(1, 1), tagged(2, 1)};
  ReplayBuffer two = init_buffer(flat, 2, 8);
  CHECK(two.at(0).states(0, 0) == 0.0);
  CHECK(two.at(1).states(0, 0) == 1.0);

  CHECK(init_buffer(flat, 10, 8).size() == 3);
  CHECK_THROWS(init_buffer(flat, 0, 8));
}

TEST_CASE("length-proportional trajectory sampling") {
  const std::vector<Trajectory> buf{tagged(0, 2), tagged(1, 3), tagged(2, 5)};
  std::mt19937_64 rng(13);
  const int n = 10000;
  const auto windows = sample_windows(buf, n, 1, RtgSource::kOriginal, rng);
  double counts[3] = {0, 0, 0};
  for (const auto& w : windows) counts[static_cast<int>(w.states(0, 0))] += 1;
  CHECK(std::abs(counts[0] / n - 0.2) <= 0.02);
  CHECK(std::abs(counts[1] / n - 0.3) <= 0.02);
  CHECK(std::abs(counts[2] / n - 0.5) <= 0.02);
}

TEST_CASE("training windows are rtg-consistent") {
  std::vector<Trajectory> data = stitch_data(9).trajectories;
  relabel_with_cql(data, default_stitch_graph().num_items(), CqlConfig{});
  std::mt19937_64 rng(2);
  for (const auto& w : sample_windows(data, 200, 3, RtgSource::kRelabeled, rng))
    for (Index i = 0; i + 1 < w.size(); ++i)
      if (w.mask(i)) CHECK(w.rtg(i) == w.rewards(i) + w.rtg(i + 1));
}

TEST_CASE("pretraining overfits a single trajectory") {
  const ItemGraph g = default_stitch_graph();
  Dataset d = stitch_data(1);
  TrainConfig cfg;
  cfg.pretrain_iterations = 500;
  const PretrainResult r = pretrain_offline(d, cfg, small());
  REQUIRE(r.history.size() == 500);
  const double first = r.history.front().nll, last = r.history.back().nll;
  MESSAGE("NLL " << first << " -> " << last);
  CHECK(first > 0.0);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("pretraining is deterministic") {
  const Dataset d = stitch_data(12);
  const PretrainResult a = pretrain_offline(d, quick(), small());
  const PretrainResult b = pretrain_offline(d, quick(), small());
  CHECK(a.policy.params() == b.policy.params());
  CHECK(a.omega == b.omega);
}

TEST_CASE("zero rounds leaves parameters unchanged") {
  const ItemGraph g = default_stitch_graph();
  const Dataset d = stitch_data(12);
  TrainConfig cfg = quick();
  PretrainResult pre = pretrain_offline(d, cfg, small());
  const ParameterSet before = pre.policy.params();
  cfg.rounds = 0;
  const FinetuneResult fin = finetune_online(g, d, std::move(pre.policy), pre.omega, cfg);
  CHECK(fin.policy.params() == before);
  CHECK(fin.omega == pre.omega);
  CHECK(fin.rounds.empty());
}

TEST_CASE("finetuning is deterministic and logs every round") {
  const ItemGraph g = default_stitch_graph();
  const Dataset d = stitch_data(12);
  auto run = [&] {
    PretrainResult pre = pretrain_offline(d, quick(), small());
    return finetune_online(g, d, std::move(pre.policy), pre.omega, quick());
  };
  const FinetuneResult a = run(), b = run();
  REQUIRE(a.rounds.size() == 2);
  CHECK(a.policy.params() == b.policy.params());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    CHECK(a.rounds[i].round == static_cast<int>(i));
    CHECK(a.rounds[i].rollout_path == b.rounds[i].rollout_path);
    CHECK(a.rounds[i].lambda == b.rounds[i].lambda);
    CHECK(a.rounds[i].buffer_size <= static_cast<std::size_t>(quick().capacity));
  }
}

TEST_CASE("rollouts are legal episodes") {
  const ItemGraph g = default_stitch_graph();
  const PretrainResult pre = pretrain_offline(stitch_data(12), quick(), small());
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const RolloutResult r = rollout(g, pre.policy, 2.0, SampleMode::kStochastic, rng);
    CHECK(r.path.front() == g.start());
    CHECK(g.is_terminal(r.path.back()));
    CHECK_FALSE(r.truncated);
    CHECK(r.trajectory.total_return() == g.path_return(r.path));
  }
}

TEST_CASE("errors") {
  CHECK_THROWS(pretrain_offline(Dataset{}, quick(), small()));
  TrainConfig bad = quick();
  bad.K = 0;
  CHECK_THROWS(bad.validate());
  bad = quick();
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
}
