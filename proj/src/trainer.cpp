#include "edt/trainer.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

namespace edt {

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

}  // namespace

void TrainConfig::validate() const {
  if (rounds < 0) throw ConfigError("train: rounds must be >= 0");
  if (iterations < 1 || batch_size < 1 || K < 1 || capacity < 1 || top_n < 1 || step_cap < 1) {
    throw ConfigError("train: iterations, batch_size, K, capacity, top_n and step_cap must be >= 1");
  }
  if (pretrain_iterations < 0) throw ConfigError("train: pretrain_iterations must be >= 0");
  if (!(lr > 0.0) || !(dual_lr > 0.0)) throw ConfigError("train: learning rates must be > 0");
  if (!(init_lambda > 0.0)) throw ConfigError("train: init_lambda must be > 0");
  if (refit_sweeps < 0) throw ConfigError("train: refit_sweeps must be >= 0");
  cql.validate();
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(int capacity, bool protect_seeds)
    : capacity_(capacity), protect_seeds_(protect_seeds) {
  if (capacity < 1) throw ConfigError("replay buffer capacity must be >= 1");
}

int ReplayBuffer::insert(Trajectory traj, bool seed) {
  traj.validate();
  items_.push_back({std::move(traj), seed});
  int evicted = 0;
  while (items_.size() > static_cast<std::size_t>(capacity_)) {
    auto victim = items_.begin();
    if (protect_seeds_) {
      victim = std::find_if(items_.begin(), items_.end(), [](const Item& it) { return !it.seed; });
      if (victim == items_.end()) victim = items_.begin();
    }
    items_.erase(victim);
    ++evicted;
  }
  return evicted;
}

std::vector<Trajectory> ReplayBuffer::trajectories() const {
  std::vector<Trajectory> out;
  out.reserve(items_.size());
  for (const auto& it : items_) out.push_back(it.traj);
  return out;
}

ReplayBuffer init_buffer(const Dataset& dataset, int n, int capacity, bool protect_seeds) {
  if (n < 1) throw ConfigError("init_buffer: N must be >= 1");
  if (dataset.empty()) throw Error("init_buffer: empty dataset");
  if (static_cast<std::size_t>(n) > dataset.size()) {
    warn("dataset has " + std::to_string(dataset.size()) + " trajectories, fewer than top-N " +
         std::to_string(n) + "; taking all");
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.trajectories[a].total_return() > dataset.trajectories[b].total_return();
  });
  const std::size_t take = std::min(order.size(), static_cast<std::size_t>(n));
  ReplayBuffer buf(std::max(capacity, static_cast<int>(take)), protect_seeds);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<long>(take));
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) buf.insert(dataset.trajectories[i], true);
  return buf;
}

std::vector<ContextWindow> sample_windows(std::span<const Trajectory> trajectories, int B, int K,
                                          RtgSource source, std::mt19937_64& rng) {
  if (trajectories.empty()) throw Error("sample_windows: no trajectories");
  std::vector<double> lengths;
  lengths.reserve(trajectories.size());
  for (const auto& t : trajectories) lengths.push_back(static_cast<double>(t.length()));
  std::discrete_distribution<std::size_t> pick(lengths.begin(), lengths.end());
  std::vector<ContextWindow> out;
  out.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) out.push_back(sample_subsequence(trajectories[pick(rng)], K, rng, source));
  return out;
}

QTable relabel_with_cql(std::vector<Trajectory>& trajectories, int num_actions,
                        const CqlConfig& cql) {
  QTable q = cql_fit(trajectories, num_actions, cql);
  const ValueFunction v = greedy_value_function(q);
  for (auto& t : trajectories) relabel_trajectory(t, v);
  return q;
}

// ---------------------------------------------------------------------------
// Offline pretraining
// ---------------------------------------------------------------------------

PolicyConfig policy_config_for(const TrainConfig& cfg, PolicyConfig base) {
  base.K = cfg.K;
  if (base.seed == 0) base.seed = cfg.seed;
  return base;
}

PretrainResult pretrain_offline(const Dataset& dataset, const TrainConfig& cfg,
                                const PolicyConfig& arch) {
  cfg.validate();
  if (dataset.empty()) throw Error("pretrain_offline: empty dataset");
  const PolicyConfig pc = policy_config_for(cfg, arch);
  Encoding enc = Encoding::make(dataset.state_space, dataset.action_space, pc.action_dim, pc.seed);

  PretrainResult res{Policy(pc, std::move(enc)), 0.0, {}, std::nullopt};
  std::vector<Trajectory> data = dataset.trajectories;
  RtgSource source = RtgSource::kOriginal;
  if (cfg.relabel) {
    const bool labeled = std::all_of(data.begin(), data.end(),
                                     [](const Trajectory& t) { return t.rtg_relabel.has_value(); });
    if (!labeled) {
      if (!dataset.action_space.discrete()) {
        throw ConfigError("pretrain_offline: relabeling needs a discrete action space");
      }
      res.q = relabel_with_cql(data, static_cast<int>(dataset.action_space.size), cfg.cql);
    }
    source = RtgSource::kRelabeled;
  }

  std::mt19937_64 rng(cfg.seed);
  Adam opt(AdamOptions{cfg.lr});
  DualVariable dual(cfg.init_lambda, AdamOptions{cfg.dual_lr});
  const StepOptions so{cfg.loss, cfg.entropy, true};
  for (int it = 0; it < cfg.pretrain_iterations; ++it) {
    const auto windows = sample_windows(data, cfg.batch_size, cfg.K, source, rng);
    res.history.push_back(lagrangian_step(res.policy, res.policy.make_batch(windows), dual, opt, so));
  }
  res.omega = dual.omega();
  return res;
}

// ---------------------------------------------------------------------------
// Online finetuning
// ---------------------------------------------------------------------------

RolloutResult rollout(const ItemGraph& graph, const Policy& policy, double g, SampleMode mode,
                      std::mt19937_64& rng, int step_cap) {
  const Encoding& enc = policy.encoding();
  EnvState s = reset(graph);
  std::vector<RowVector> states{state_row(s)};
  std::vector<double> actions, rewards, rtgs{g};
  RolloutResult res;
  res.path = {s.current};
  while (!is_done(graph, s)) {
    if (s.step >= step_cap) {
      warn("rollout hit the step cap of " + std::to_string(step_cap) + "; truncating");
      res.truncated = true;
      break;
    }
    const Index t = static_cast<Index>(actions.size());
    Matrix S(t + 1, kStateColumns), A(t, 1);
    Vector G(t + 1);
    for (Index i = 0; i <= t; ++i) {
      S.row(i) = states[static_cast<std::size_t>(i)];
      G(i) = rtgs[static_cast<std::size_t>(i)];
      if (i < t) A(i, 0) = actions[static_cast<std::size_t>(i)];
    }
    const ActionDistribution dist = policy.predict(inference_window(S, A, G, policy.config().K));
    const RowVector a = sample_action(dist, mode, rng);
    const int item = enc.decode(a, graph.successors(s.current));
    StepResult r = step(graph, s, item);
    actions.push_back(item);
    rewards.push_back(r.reward);
    rtgs.push_back(std::max(0.0, rtgs.back() - r.reward));
    s = std::move(r.state);
    states.push_back(state_row(s));
    res.path.push_back(item);
  }
  if (actions.empty()) throw Error("rollout: start item is terminal");
  const Index T = static_cast<Index>(actions.size());
  Matrix S(T, kStateColumns), A(T, 1);
  Vector R(T);
  for (Index i = 0; i < T; ++i) {
    S.row(i) = states[static_cast<std::size_t>(i)];
    A(i, 0) = actions[static_cast<std::size_t>(i)];
    R(i) = rewards[static_cast<std::size_t>(i)];
  }
  res.trajectory = Trajectory::from_rewards(std::move(S), std::move(A), std::move(R));
  return res;
}

FinetuneResult finetune_online(const ItemGraph& graph, const Dataset& dataset, Policy policy,
                               double omega, const TrainConfig& cfg) {
  cfg.validate();
  FinetuneResult res{std::move(policy), omega, {}};
  if (cfg.rounds == 0) return res;
  if (res.policy.config().K != cfg.K) {
    throw ConfigError("finetune: policy K=" + std::to_string(res.policy.config().K) +
                      " but config K=" + std::to_string(cfg.K));
  }
  const int num_actions = graph.num_items();
  ReplayBuffer buffer = init_buffer(dataset, cfg.top_n, cfg.capacity, cfg.protect_seeds);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam opt(AdamOptions{cfg.lr});
  DualVariable dual(1.0, AdamOptions{cfg.dual_lr});
  dual.set_omega(omega);
  const StepOptions so{cfg.loss, cfg.entropy, true};
  const RtgSource source = cfg.relabel ? RtgSource::kRelabeled : RtgSource::kOriginal;

  std::optional<QTable> frozen_q;
  if (cfg.relabel && !cfg.refit_q_each_round) {
    frozen_q = cql_fit(dataset, cfg.cql);
  }
  CqlConfig refit = cfg.cql;
  refit.sweeps = cfg.refit_sweeps;

  for (int round = 0; round < cfg.rounds; ++round) {
    RolloutResult ro =
        rollout(graph, res.policy, cfg.g_online, SampleMode::kStochastic, rng, cfg.step_cap);
    RoundMetrics m;
    m.round = round;
    m.rollout_return = ro.trajectory.total_return();
    m.rollout_length = static_cast<int>(ro.trajectory.length());
    m.rollout_path = graph.path_to_string(ro.path);
    m.evicted = buffer.insert(std::move(ro.trajectory));

    std::vector<Trajectory> data = buffer.trajectories();
    if (cfg.relabel) {
      if (frozen_q) {
        const ValueFunction v = greedy_value_function(*frozen_q);
        for (auto& t : data) relabel_trajectory(t, v);
      } else {
        refit.seed = cfg.cql.seed + static_cast<std::uint64_t>(round) + 1;
        relabel_with_cql(data, num_actions, refit);
      }
    }
    for (int it = 0; it < cfg.iterations; ++it) {
      const auto windows = sample_windows(data, cfg.batch_size, cfg.K, source, rng);
      const StepStats st = lagrangian_step(res.policy, res.policy.make_batch(windows), dual, opt, so);
      m.nll += st.nll / cfg.iterations;
      m.entropy += st.entropy / cfg.iterations;
      m.loss += st.loss / cfg.iterations;
      m.lambda = st.lambda;
    }
    m.buffer_size = buffer.size();
    res.rounds.push_back(std::move(m));
  }
  res.omega = dual.omega();
  return res;
}

}  // namespace edt
