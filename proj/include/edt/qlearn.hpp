#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "edt/relabel.hpp"
#include "edt/trajectory.hpp"

namespace edt {

struct CqlConfig {
  /// Weight of the conservative penalty. 0 gives plain tabular fitted-Q.
  double alpha = 1.0;
  double gamma = 1.0;
  double lr = 0.1;
  int sweeps = 5000;
  /// Also push data actions up (the -E_D[Q] half of the penalty). Off by
  /// default: with a uniform mu it lifts frequently logged actions above their
  /// Bellman target, which breaks the lower bound.
  bool maximize_data_q = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Discrete state key: the integral ids of one state row.
using StateKey = std::vector<int>;
StateKey state_key(const Eigen::Ref<const RowVector>& row);

/// Tabular Q over states seen in the data and action ids 1..num_actions.
/// Only (state, action) pairs observed in the data are materialized; every
/// other lookup returns 0.
class QTable {
 public:
  QTable() = default;
  explicit QTable(int num_actions) : num_actions_(num_actions) {}

  int num_actions() const { return num_actions_; }
  std::size_t num_states() const { return keys_.size(); }
  const std::vector<StateKey>& states() const { return keys_; }

  bool contains(const StateKey& s) const { return index_.count(s) != 0; }
  bool supported(const StateKey& s, int action) const;
  double q(const StateKey& s, int action) const;
  /// Q row over actions 1..n (zeros for an unknown state).
  RowVector row(const StateKey& s) const;
  std::vector<int> seen_actions(const StateKey& s) const;

  /// Max of Q over the actions seen at `s`; 0 for an unknown state.
  double greedy_value(const StateKey& s) const;
  /// Argmax over seen actions (ties to the lowest id); 0 for an unknown state.
  int greedy_action(const StateKey& s) const;

  /// Adds `s` (if new) and marks `action` as observed there.
  int insert(const StateKey& s, int action);
  double& at(int state_index, int action) { return values_(state_index, action - 1); }
  double at(int state_index, int action) const { return values_(state_index, action - 1); }
  int index_of(const StateKey& s) const;

  void save(std::ostream& os) const;
  void save(const std::string& path) const;
  static QTable load(std::istream& is);
  static QTable load(const std::string& path);

  friend bool operator==(const QTable& a, const QTable& b);

 private:
  int num_actions_ = 0;
  std::vector<StateKey> keys_;
  std::map<StateKey, int> index_;
  Matrix values_;
  MatrixX<bool> seen_;
};

/// Minimizes, by per-transition stochastic updates in shuffled order,
///   1/2 (Q(s,a) - y)^2 + alpha (E_{a'~mu} Q(s,a') [- Q(s,a)])
/// with mu uniform over the action space and
///   y = r + gamma * max_{a' seen at s'} Q(s',a')   (y = r at episode end).
QTable cql_fit(std::span<const Trajectory> trajectories, int num_actions, const CqlConfig& cfg);
QTable cql_fit(const Dataset& dataset, const CqlConfig& cfg);

struct StateValue {
  double value = 0.0;
  /// False when `s` is not in the table (value is then 0).
  bool covered = false;
};

/// E_{a~policy}[Q(s,a)]. `policy` is a distribution over actions 1..n and must
/// sum to 1 within 1e-6.
StateValue state_value(const QTable& q, const Eigen::Ref<const RowVector>& policy,
                       const StateKey& s);

/// V(s) under the greedy policy restricted to seen actions. States absent from
/// the table (including terminal states) are worth 0.
ValueFunction greedy_value_function(const QTable& q);

}  // namespace edt
