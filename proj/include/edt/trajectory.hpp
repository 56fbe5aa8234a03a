#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "edt/tensor.hpp"

namespace edt {

/// Suffix sums: out[t] = sum_{t' >= t} rewards[t'].
template <typename Derived>
VectorX<typename Derived::Scalar> reward_to_go(const Eigen::MatrixBase<Derived>& rewards) {
  using Scalar = typename Derived::Scalar;
  const Index n = rewards.size();
  VectorX<Scalar> out(n);
  Scalar acc(0);
  for (Index t = n - 1; t >= 0; --t) {
    acc += rewards(t);
    out(t) = acc;
  }
  return out;
}

/// One episode. Row t of `states`/`actions` is the state/action at step t.
/// Discrete spaces store integral ids as doubles (one id per column).
struct Trajectory {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Vector rtg;
  /// Value-guided RTG; the original `rtg` is never overwritten.
  std::optional<Vector> rtg_relabel;

  /// Builds a fresh trajectory with rtg = reward_to_go(rewards).
  static Trajectory from_rewards(Matrix states, Matrix actions, Vector rewards);

  Index length() const { return rewards.size(); }
  double total_return() const { return rewards.sum(); }
  /// Throws FormatError if the sequences disagree in length or T < 1.
  void validate() const;

  friend bool operator==(const Trajectory& a, const Trajectory& b);
};

inline constexpr int kPadTimestep = -1;

/// Length-K slice ending at `end`, left-padded (timestep -1, zero vectors,
/// RTG 0, mask false) where the slice starts before t = 0.
struct ContextWindow {
  Vector rtg;
  Matrix states;
  Matrix actions;
  Vector rewards;
  Eigen::VectorXi timesteps;
  VectorX<bool> mask;
  Index end = 0;

  Index size() const { return rtg.size(); }
};

enum class RtgSource {
  kOriginal,
  /// Anchor the last position at rtg_relabel[end] and regenerate earlier
  /// entries from the original rewards (falls back to kOriginal when the
  /// trajectory has not been relabeled).
  kRelabeled,
};

ContextWindow window_at(const Trajectory& traj, Index end, int K,
                        RtgSource source = RtgSource::kOriginal);

/// End index drawn uniformly from [0, T-1].
ContextWindow sample_subsequence(const Trajectory& traj, int K, std::mt19937_64& rng,
                                 RtgSource source = RtgSource::kOriginal);

/// p(tau_i) = |tau_i| / sum_j |tau_j|.
Vector trajectory_sampling_probs(const std::vector<Trajectory>& buffer);

struct SpaceDescriptor {
  enum class Kind { kDiscrete, kContinuous };
  Kind kind = Kind::kContinuous;
  /// Number of ids (discrete; ids are 1..size) or vector dimension (continuous).
  Index size = 0;
  /// Columns per row in the trajectory matrices.
  Index columns = 0;

  bool discrete() const { return kind == Kind::kDiscrete; }
  friend bool operator==(const SpaceDescriptor&, const SpaceDescriptor&) = default;
};

struct DatasetManifest {
  std::size_t count = 0;
  SpaceDescriptor state_space;
  SpaceDescriptor action_space;
  double reward_min = 0.0;
  double reward_max = 0.0;
  std::string provenance;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  SpaceDescriptor state_space;
  SpaceDescriptor action_space;
  std::string provenance;

  DatasetManifest manifest() const;
  bool empty() const { return trajectories.empty(); }
  std::size_t size() const { return trajectories.size(); }
};

inline constexpr int kDatasetVersion = 1;

/// Line-delimited JSON: a header record, then one record per trajectory with
/// `states`, `actions`, `rewards`, `rtg` and optional `rtg_relabel`. The
/// manifest is written alongside as `<path>.manifest.json`.
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);
std::string manifest_path(const std::string& dataset_path);

struct RatingEvent {
  std::int64_t user = 0;
  std::int64_t item = 0;
  double rating = 0.0;
  double timestamp = 0.0;
};

struct IngestOptions {
  double max_rating = 5.0;
  /// Number of most recent clicked items kept in the state (most recent first).
  int window = 5;
  /// Clicks are ratings strictly above this fraction of max_rating.
  double positive_fraction = 0.75;
};

/// One trajectory per user, interactions ordered by timestamp (ties keep log
/// order). Items are re-indexed to dense ids 1..n in ascending raw-id order;
/// id 0 pads the state window. Reward is 1 for a click, else 0.
Dataset ingest_ratings(const std::vector<RatingEvent>& log, const IngestOptions& opts);

/// Maps ingested dense ids back to raw item ids (index = dense id).
std::vector<std::int64_t> ingested_item_ids(const std::vector<RatingEvent>& log);

/// CSV with columns user,item,rating,timestamp (an optional header row is skipped).
std::vector<RatingEvent> read_rating_log(const std::string& path);

}  // namespace edt
