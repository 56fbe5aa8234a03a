#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "edt/error.hpp"
#include "edt/gaussian.hpp"
#include "edt/trainer.hpp"

using namespace edt;

namespace {

struct Fixture {
  ItemGraph graph = default_stitch_graph();
  Dataset data = generate_offline_dataset(graph, default_logging_policies(graph), 6, 0);

  Policy make(PolicyConfig pc = {}) const {
    if (pc.width == PolicyConfig{}.width) pc.width = 16;
    return Policy(pc, Encoding::make(data.state_space, data.action_space, pc.action_dim, pc.seed));
  }

  Batch batch(const Policy& p, int B, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    return p.make_batch(sample_windows(data.trajectories, B, p.config().K, RtgSource::kOriginal, rng));
  }
};

// Unit-shaped outputs placed directly on a tape, for closed-form checks.
struct Manual {
  Tape tape;
  Batch batch;
  PolicyOutput out;

  Manual(const Matrix& mean, const Matrix& logvar, const Matrix& actions) {
    batch.B = 1;
    batch.K = mean.rows();
    batch.actions = actions;
    batch.mask.assign(static_cast<std::size_t>(mean.rows()), true);
    out = {tape.variable(mean), tape.variable(logvar)};
  }
};

double flat_distance(const ParameterSet& a, const ParameterSet& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i)
    s += (a.entries()[i].value - b.entries()[i].value).squaredNorm();
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("forward shapes") {
  Fixture f;
  Policy p = f.make();
  const Batch b = f.batch(p, 3, 1);
  Tape t;
  const PolicyOutput out = p.forward(t, b);
  CHECK(out.mean.rows() == 3 * 2);
  CHECK(out.mean.cols() == 8);
  CHECK(out.logvar.rows() == 6);
  CHECK(out.logvar.cols() == 8);
  const ActionDistribution d = p.predict(window_at(f.data.trajectories[0], 2, 2));
  CHECK(d.mean.size() == 8);
}

TEST_CASE("wrong window length is a shape error") {
  Fixture f;
  Policy p = f.make();
  CHECK_THROWS_AS(p.predict(window_at(f.data.trajectories[0], 2, 3)), ShapeError);
}

TEST_CASE("causal mask") {
  Fixture f;
  PolicyConfig pc;
  pc.K = 3;
  Policy p = f.make(pc);
  const Batch base = f.batch(p, 1, 4);
  auto run = [&](const Batch& b) {
    Tape t;
    const PolicyOutput out = p.forward(t, b);
    return std::make_pair(Matrix(out.mean.value()), Matrix(out.logvar.value()));
  };
  const auto ref = run(base);

  // Own action token and anything later leave a position unchanged.
  for (Index pos = 0; pos < 3; ++pos) {
    Batch b = base;
    b.actions.row(pos).array() += 0.7;
    if (pos + 1 < 3) b.states.row(pos + 1).array() += 0.3;
    if (pos + 1 < 3) b.rtg(pos + 1, 0) += 1.0;
    const auto got = run(b);
    for (Index q = 0; q <= pos; ++q) {
      CHECK(got.first.row(q) == ref.first.row(q));
      CHECK(got.second.row(q) == ref.second.row(q));
    }
  }

  // The first rtg token reaches the last position.
  Batch b = base;
  b.mask.assign(3, true);
  b.timesteps = {0, 1, 2};
  const auto full = run(b);
  b.rtg(0, 0) += 1.0;
  CHECK((run(b).first.row(2) - full.first.row(2)).norm() > 0.0);
}

TEST_CASE("NLL closed forms") {
  Manual unit(Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  CHECK(std::abs(gaussian_nll_loss(unit.out, unit.batch).item() - 0.918939) < 1e-6);

  // a == mu: loss is 1/2 sum(ln 2pi + logvar); doubling sigma adds ln 2 per dimension.
  Matrix mu(2, 3), lv(2, 3);
  mu << 0.1, -0.4, 2.0, 1.0, 0.0, -3.0;
  lv << 0.2, -1.0, 0.5, 0.0, 1.5, -0.3;
  Manual at_mean(mu, lv, mu);
  const double expected = 0.5 * ((lv.array() + kLog2Pi).rowwise().sum()).mean();
  const double got = gaussian_nll_loss(at_mean.out, at_mean.batch).item();
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));

  Manual doubled(mu, (lv.array() + 2.0 * std::log(2.0)).matrix(), mu);
  CHECK(gaussian_nll_loss(doubled.out, doubled.batch).item() - got ==
        doctest::Approx(3 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("entropy closed forms") {
  Manual unit(Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  CHECK(std::abs(gaussian_entropy_loss(unit.out, unit.batch).item() - 1.418939) < 1e-6);

  Matrix lv(2, 1);
  lv << -0.5, 1.25;
  Manual two(Matrix::Zero(2, 1), lv, Matrix::Zero(2, 1));
  const double h1 = gaussian_entropy(Matrix(lv.row(0))), h2 = gaussian_entropy(Matrix(lv.row(1)));
  CHECK(gaussian_entropy_loss(two.out, two.batch).item() == doctest::Approx((h1 + h2) / 2).epsilon(1e-12));

  Manual doubled(Matrix::Zero(2, 1), (lv.array() + 2.0 * std::log(2.0)).matrix(), Matrix::Zero(2, 1));
  CHECK(gaussian_entropy_loss(doubled.out, doubled.batch).item() -
            gaussian_entropy_loss(two.out, two.batch).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("masked positions are ignored") {
  Matrix mu = Matrix::Zero(2, 1), lv = Matrix::Zero(2, 1), a(2, 1);
  a << 0.0, 100.0;
  Manual m(mu, lv, a);
  m.batch.mask = {true, false};
  CHECK(gaussian_nll_loss(m.out, m.batch).item() == doctest::Approx(0.5 * kLog2Pi));
}

TEST_CASE("logvar stays inside the clamp") {
  Fixture f;
  PolicyConfig pc;
  Policy p = f.make(pc);
  for (auto& e : p.params().entries())
    if (e.name.rfind("head.logvar", 0) == 0) e.value.array() += 50.0;
  Tape t;
  const PolicyOutput out = p.forward(t, f.batch(p, 2, 0));
  // The soft clamp saturates at the bound up to rounding.
  CHECK(out.logvar.value().maxCoeff() <= pc.logvar_max() + 1e-12);
  CHECK(out.logvar.value().minCoeff() >= pc.logvar_min() - 1e-12);
}

TEST_CASE("tiny lambda matches a pure NLL step") {
  Fixture f;
  const Policy start = f.make();
  const Batch b = f.batch(start, 4, 3);

  Policy with_dual = start, pure = start;
  DualVariable tiny(1e-8), unused(1.0);
  Adam o1, o2;
  StepOptions keep;
  keep.update_dual = false;
  lagrangian_step(with_dual, b, tiny, o1, keep);
  StepOptions nll_only = keep;
  nll_only.entropy = false;
  lagrangian_step(pure, b, unused, o2, nll_only);

  const double moved = flat_distance(pure.params(), start.params());
  CHECK(moved > 0.0);
  CHECK(flat_distance(with_dual.params(), pure.params()) / moved < 1e-6);
}

TEST_CASE("fixed variance makes NLL and l2 gradients parallel") {
  Fixture f;
  PolicyConfig pc;
  pc.fixed_logvar = 0.3;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    pc.seed = seed;
    Policy p = f.make(pc);
    const Batch b = f.batch(p, 4, seed);
    auto grads = [&](bool nll) {
      p.params().zero_grad();
      Tape t;
      const PolicyOutput out = p.forward(t, b);
      t.backward(nll ? gaussian_nll_loss(out, b) : l2_action_loss(out, b));
      std::vector<double> g;
      for (const auto& e : p.params().entries())
        if (e.trainable) g.insert(g.end(), e.grad.data(), e.grad.data() + e.grad.size());
      return Eigen::Map<const Vector>(g.data(), static_cast<Index>(g.size())).eval();
    };
    const Vector a = grads(true), c = grads(false);
    CHECK(a.dot(c) / (a.norm() * c.norm()) > 0.999);
  }
}

TEST_CASE("sampling") {
  std::mt19937_64 rng(2);
  ActionDistribution d{RowVector::Constant(3, 0.25), RowVector::Constant(3, 2 * std::log(1e-2))};
  CHECK(sample_action(d, SampleMode::kMean, rng) == d.mean);
  for (int i = 0; i < 1000; ++i)
    CHECK((sample_action(d, SampleMode::kStochastic, rng) - d.mean).cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("nearest-neighbour decode") {
  Encoding enc;
  enc.action_space = {SpaceDescriptor::Kind::kDiscrete, 8, 1};
  enc.action_embedding = Matrix::Zero(9, 2);
  enc.action_embedding.row(3) << 1, 0;
  enc.action_embedding.row(6) << 0, 1;
  RowVector a(2);
  a << 0.9, 0.2;
  const int legal[] = {3, 6};
  CHECK(enc.decode(a, legal) == 3);
  CHECK_THROWS_AS(enc.decode(a, std::span<const int>()), InvalidAction);
}

TEST_CASE("orthogonal item embeddings") {
  Fixture f;
  const Encoding enc = Encoding::make(f.data.state_space, f.data.action_space, 8, 3);
  const Matrix& e = enc.action_embedding;
  CHECK(e.row(0).isZero());
  const Matrix gram = e.bottomRows(e.rows() - 1) * e.bottomRows(e.rows() - 1).transpose();
  CHECK(gram.isIdentity(1e-12));
}

TEST_CASE("dual variable direction and positivity") {
  DualVariable shrink(1.0), grow(1.0);
  CHECK(shrink.step(2.0, 1.0) > 0.0);
  CHECK(shrink.lambda() < 1.0);
  CHECK(grow.step(0.0, 1.0) < 0.0);
  CHECK(grow.lambda() > 1.0);
  for (int i = 0; i < 5000; ++i) shrink.step(10.0, 0.0);
  CHECK(shrink.lambda() > 0.0);
  CHECK(shrink.omega() >= DualVariable::kOmegaMin);
  CHECK_THROWS_AS(shrink.step(std::nan(""), 0.0), NumericError);
}

TEST_CASE("checkpoint round trip") {
  Fixture f;
  PolicyConfig pc;
  pc.beta = -0.75;
  pc.K = 3;
  pc.seed = 12;
  const Policy p = f.make(pc);
  const std::string path = (std::filesystem::temp_directory_path() / "edt_policy.ckpt").string();
  p.save(path, -1.25);
  const auto [back, omega] = Policy::load(path);
  CHECK(omega == -1.25);
  CHECK(back.params() == p.params());
  CHECK(back.config().K == 3);
  CHECK(back.config().beta == -0.75);
  CHECK(back.encoding().action_embedding == p.encoding().action_embedding);
  const ContextWindow w = window_at(f.data.trajectories[1], 2, 3);
  CHECK(back.predict(w).mean == p.predict(w).mean);
  std::filesystem::remove(path);
}

TEST_CASE("default entropy target") {
  PolicyConfig pc;
  CHECK(pc.entropy_target() == doctest::Approx(0.5 * 8 * 0.5 * (1 + kLog2Pi)));
  pc.beta = 1.5;
  CHECK(pc.entropy_target() == 1.5);
}
