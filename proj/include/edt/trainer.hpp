#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "edt/envsim.hpp"
#include "edt/policy.hpp"
#include "edt/qlearn.hpp"

namespace edt {

struct TrainConfig {
  int rounds = 50;
  /// Gradient updates per finetuning round (I).
  int iterations = 100;
  int batch_size = 16;
  int K = 2;
  double g_online = 2.0;
  int capacity = 64;
  int top_n = 8;
  int step_cap = 50;
  int pretrain_iterations = 1000;
  bool relabel = true;
  bool entropy = true;
  LossKind loss = LossKind::kNll;
  /// Refit Q on the replay buffer at the start of each round; otherwise the
  /// offline Q stays fixed.
  bool refit_q_each_round = true;
  /// Sweeps used by the per-round refit (the offline fit uses cql.sweeps).
  int refit_sweeps = 500;
  /// Keep the top-N seed trajectories out of FIFO eviction.
  bool protect_seeds = false;
  double lr = 1e-3;
  double dual_lr = 1e-2;
  double init_lambda = 1.0;
  CqlConfig cql;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Bounded FIFO store of trajectories in insertion order.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity, bool protect_seeds = false);

  /// Appends and evicts the oldest evictable entries beyond capacity.
  /// Returns the number of evicted trajectories.
  int insert(Trajectory traj, bool seed = false);

  int capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Trajectory& at(std::size_t i) const { return items_[i].traj; }
  Trajectory& at(std::size_t i) { return items_[i].traj; }
  bool is_seed(std::size_t i) const { return items_[i].seed; }
  std::vector<Trajectory> trajectories() const;

 private:
  struct Item {
    Trajectory traj;
    bool seed = false;
  };
  int capacity_;
  bool protect_seeds_;
  std::deque<Item> items_;
};

/// The N highest-return trajectories of `dataset`, ties in dataset order.
/// Takes everything (with a warning) when the dataset is smaller than N.
ReplayBuffer init_buffer(const Dataset& dataset, int n, int capacity, bool protect_seeds = false);

/// Draws B trajectory indices with p(i) = |tau_i| / sum_j |tau_j|, relabels are
/// read from rtg_relabel, and one length-K window is cut from each.
std::vector<ContextWindow> sample_windows(std::span<const Trajectory> trajectories, int B, int K,
                                          RtgSource source, std::mt19937_64& rng);

/// Fits Q on `trajectories` and fills rtg_relabel on each.
QTable relabel_with_cql(std::vector<Trajectory>& trajectories, int num_actions,
                        const CqlConfig& cql);

struct PretrainResult {
  Policy policy;
  double omega = 0.0;
  std::vector<StepStats> history;
  std::optional<QTable> q;
};

PolicyConfig policy_config_for(const TrainConfig& cfg, PolicyConfig base = {});

/// Offline phase: relabel the static dataset once (skipped when every
/// trajectory already carries rtg_relabel), then run
/// cfg.pretrain_iterations sample-and-update steps on it.
PretrainResult pretrain_offline(const Dataset& dataset, const TrainConfig& cfg,
                                const PolicyConfig& arch = {});

struct RolloutResult {
  Trajectory trajectory;
  ItemPath path;
  bool truncated = false;
};

/// One episode conditioned on RTG g, decremented by each reward and floored at 0.
RolloutResult rollout(const ItemGraph& graph, const Policy& policy, double g, SampleMode mode,
                      std::mt19937_64& rng, int step_cap = 50);

struct RoundMetrics {
  int round = 0;
  double rollout_return = 0.0;
  int rollout_length = 0;
  std::string rollout_path;
  double nll = 0.0;
  double entropy = 0.0;
  double lambda = 0.0;
  double loss = 0.0;
  std::size_t buffer_size = 0;
  int evicted = 0;
};

struct FinetuneResult {
  Policy policy;
  double omega = 0.0;
  std::vector<RoundMetrics> rounds;
};

/// Online phase. The buffer starts from the top-N trajectories of `dataset`;
/// every round rolls out once, inserts, optionally refits Q and relabels the
/// buffer, then performs cfg.iterations updates.
FinetuneResult finetune_online(const ItemGraph& graph, const Dataset& dataset, Policy policy,
                               double omega, const TrainConfig& cfg);

}  // namespace edt
