#pragma once

#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "edt/trajectory.hpp"

namespace edt {

/// Items are numbered 1..n in declaration order; 0 means "no item".
using ItemId = int;
inline constexpr ItemId kNoItem = 0;
using ItemPath = std::vector<ItemId>;

/// Directed acyclic item graph. Terminal items have no successors and carry a
/// reward; reaching any other item pays 0.
class ItemGraph {
 public:
  ItemGraph() = default;

  /// Parses the declarative text format:
  ///   node <name>...            (optional; nodes are also declared by use)
  ///   edge <from> <to>...
  ///   terminal <name> <reward>
  ///   start <name>
  ///   path <name>...            (scripted logging path, optional)
  /// `#` starts a comment. The graph is validated before returning.
  static ItemGraph parse(std::istream& is);
  static ItemGraph parse(const std::string& text);
  static ItemGraph load(const std::string& path);
  std::string to_text() const;

  int num_items() const { return static_cast<int>(names_.size()); }
  ItemId start() const { return start_; }
  ItemId id(const std::string& name) const;
  const std::string& name(ItemId id) const;
  bool contains(ItemId id) const { return id >= 1 && id <= num_items(); }
  const std::vector<ItemId>& successors(ItemId id) const;
  bool is_terminal(ItemId id) const;
  double terminal_reward(ItemId id) const;
  const std::vector<ItemPath>& logging_paths() const { return paths_; }

  ItemPath path_from_names(const std::vector<std::string>& names) const;
  std::string path_to_string(const ItemPath& path) const;

  /// Every start-to-terminal path (the graph is a DAG, so this is finite).
  std::vector<ItemPath> enumerate_paths() const;
  /// Return collected along `path` (0 unless it ends at a terminal).
  double path_return(const ItemPath& path) const;

  /// Throws ConfigError when an invariant fails.
  void validate() const;

 private:
  ItemId intern(const std::string& name);

  std::vector<std::string> names_;
  std::map<std::string, ItemId> ids_;
  std::vector<std::vector<ItemId>> succ_;  // index = id, [0] unused
  std::map<ItemId, double> terminal_;
  std::vector<ItemPath> paths_;
  ItemId start_ = kNoItem;
};

/// Eight items, i1 -> i2 -> {i3, i6}, i3 -> {i4, i5}, i4 -> {i7, i8}, i6 -> i7;
/// i7 pays 1, i5 and i8 pay 0. Logged paths: (i1,i2,i3,i4,i8), (i1,i2,i6,i7),
/// (i1,i2,i3,i5).
ItemGraph default_stitch_graph();
std::string default_stitch_graph_text();

struct EnvState {
  ItemId current = kNoItem;
  int step = 0;
  ItemPath history;

  ItemId previous() const {
    return history.size() >= 2 ? history[history.size() - 2] : kNoItem;
  }
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

EnvState reset(const ItemGraph& graph);
/// Throws InvalidAction when `action` is not a successor of the current item.
StepResult step(const ItemGraph& graph, const EnvState& state, ItemId action);
bool is_done(const ItemGraph& graph, const EnvState& state);

/// Policy-facing state row: [current item, previous item].
RowVector state_row(const EnvState& state);
inline constexpr Index kStateColumns = 2;

/// Follows a fixed path; off-path or past its end it acts uniformly at random.
struct ScriptedPolicy {
  ItemPath path;
};
/// With probability epsilon picks a uniformly random successor, otherwise
/// follows `path` (uniform everywhere when the path is empty).
struct EpsilonRandomPolicy {
  double epsilon = 1.0;
  ItemPath path;
};
using LoggingPolicy = std::variant<ScriptedPolicy, EpsilonRandomPolicy>;

ItemId act(const LoggingPolicy& policy, const ItemGraph& graph, const EnvState& state,
           std::mt19937_64& rng);

/// Scripted policies for each logging path declared in the graph, or a single
/// uniform-random policy when the graph declares none.
std::vector<LoggingPolicy> default_logging_policies(const ItemGraph& graph);

/// Episode as a trajectory: row t of states is state_row(s_t), action t is the
/// chosen item id, reward t is the reward received on that step.
Trajectory episode_trajectory(const ItemGraph& graph, const ItemPath& path);
/// Item path (start item followed by each action) recovered from a trajectory.
ItemPath trajectory_path(const Trajectory& traj);

/// n episodes, cycling through `policies` in order. Reproducible from `seed`.
Dataset generate_offline_dataset(const ItemGraph& graph,
                                 const std::vector<LoggingPolicy>& policies, int n,
                                 std::uint64_t seed, int step_cap = 50);

/// State/action space descriptors for datasets produced from `graph`.
SpaceDescriptor graph_state_space(const ItemGraph& graph);
SpaceDescriptor graph_action_space(const ItemGraph& graph);

}  // namespace edt
