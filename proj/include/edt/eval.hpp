#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "edt/envsim.hpp"
#include "edt/policy.hpp"

namespace edt {

struct EpisodeTrace {
  ItemPath path;
  double ret = 0.0;
  /// Reached a positive-reward terminal along a path absent from the offline data.
  bool stitched = false;
};

struct EvalReport {
  int episodes = 0;
  double mean_return = 0.0;
  double stdev_return = 0.0;
  double stitch_rate = 0.0;
  /// Fraction of episodes with return >= success_threshold.
  double success_rate = 0.0;
  double success_threshold = 0.9;
  std::vector<EpisodeTrace> traces;

  /// Number of episodes whose path visits `item`.
  int visits(ItemId item) const;
  /// One JSON object per line: a summary record, then one per episode.
  void write(const std::string& path, const ItemGraph& graph) const;
};

/// Produces one episode's item path.
using EpisodeRunner = std::function<ItemPath(std::mt19937_64&)>;

EpisodeRunner scripted_runner(const ItemGraph& graph, LoggingPolicy policy, int step_cap = 50);
/// Uses `policy` by reference; it must outlive the runner.
EpisodeRunner policy_runner(const ItemGraph& graph, const Policy& policy, double g,
                            SampleMode mode, int step_cap = 50);

/// Item paths of every trajectory in `dataset`.
std::set<ItemPath> dataset_paths(const Dataset& dataset);

EvalReport evaluate(const ItemGraph& graph, const std::set<ItemPath>& offline_paths,
                    const EpisodeRunner& runner, int episodes, std::uint64_t seed);

/// Policy rollouts conditioned on g (mean-mode actions by default).
EvalReport evaluate_policy(const ItemGraph& graph, const Policy& policy, const Dataset& offline,
                           int episodes, double g, SampleMode mode = SampleMode::kMean,
                           std::uint64_t seed = 0);

struct RankMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double ndcg = 0.0;
  /// Number of evaluation states averaged over (rank_metrics only).
  int states = 1;
};

/// Top-k metrics of one ranked list against a relevant set.
/// Throws ConfigError for k < 1 and Error for an empty relevant set.
RankMetrics ranking_metrics(std::span<const int> ranked, const std::set<int>& relevant, int k);

/// Every clicked position (reward > 0) of `heldout` is an evaluation state;
/// all items are scored by the Gaussian log-density of their embedding under
/// the predicted distribution, and the clicked item is the relevant one.
RankMetrics rank_metrics(const Policy& policy, const Dataset& heldout, int k);

}  // namespace edt
