#include "edt/qlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "edt/checkpoint.hpp"

namespace edt {

void CqlConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("cql: alpha must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("cql: gamma must lie in [0, 1]");
  if (!(lr > 0.0)) throw ConfigError("cql: learning rate must be > 0");
  if (sweeps < 0) throw ConfigError("cql: sweeps must be >= 0");
}

StateKey state_key(const Eigen::Ref<const RowVector>& row) {
  StateKey key(static_cast<std::size_t>(row.size()));
  for (Index j = 0; j < row.size(); ++j) key[j] = static_cast<int>(std::lround(row(j)));
  return key;
}

int QTable::index_of(const StateKey& s) const {
  auto it = index_.find(s);
  return it == index_.end() ? -1 : it->second;
}

bool QTable::supported(const StateKey& s, int action) const {
  const int i = index_of(s);
  return i >= 0 && action >= 1 && action <= num_actions_ && seen_(i, action - 1);
}

double QTable::q(const StateKey& s, int action) const {
  return supported(s, action) ? at(index_of(s), action) : 0.0;
}

RowVector QTable::row(const StateKey& s) const {
  const int i = index_of(s);
  if (i < 0) return RowVector::Zero(num_actions_);
  return values_.row(i);
}

std::vector<int> QTable::seen_actions(const StateKey& s) const {
  std::vector<int> out;
  const int i = index_of(s);
  if (i < 0) return out;
  for (int a = 1; a <= num_actions_; ++a)
    if (seen_(i, a - 1)) out.push_back(a);
  return out;
}

double QTable::greedy_value(const StateKey& s) const {
  const int a = greedy_action(s);
  return a == 0 ? 0.0 : at(index_of(s), a);
}

int QTable::greedy_action(const StateKey& s) const {
  const int i = index_of(s);
  if (i < 0) return 0;
  int best = 0;
  for (int a = 1; a <= num_actions_; ++a) {
    if (seen_(i, a - 1) && (best == 0 || values_(i, a - 1) > values_(i, best - 1))) best = a;
  }
  return best;
}

int QTable::insert(const StateKey& s, int action) {
  if (action < 1 || action > num_actions_) {
    throw InvalidAction("action id " + std::to_string(action) + " outside 1.." +
                        std::to_string(num_actions_));
  }
  int i = index_of(s);
  if (i < 0) {
    i = static_cast<int>(keys_.size());
    keys_.push_back(s);
    index_.emplace(s, i);
    values_.conservativeResize(i + 1, num_actions_);
    values_.row(i).setZero();
    seen_.conservativeResize(i + 1, num_actions_);
    seen_.row(i).setConstant(false);
  }
  seen_(i, action - 1) = true;
  return i;
}

void QTable::save(std::ostream& os) const {
  os << "edt-qtable 1\nactions " << num_actions_ << "\nstates " << keys_.size() << '\n';
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    os << "state " << keys_[i].size();
    for (int v : keys_[i]) os << ' ' << v;
    for (int a = 1; a <= num_actions_; ++a) {
      if (!seen_(static_cast<Index>(i), a - 1)) continue;
      os << ' ' << a << ':' << format_double(values_(static_cast<Index>(i), a - 1));
    }
    os << '\n';
  }
  os << "end\n";
}

void QTable::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write q-table '" + path + "'");
  save(os);
}

QTable QTable::load(std::istream& is) {
  std::string magic, word;
  int version = 0;
  if (!(is >> magic >> version) || magic != "edt-qtable") throw FormatError("not a q-table file");
  if (version != 1) throw FormatError("unsupported q-table version " + std::to_string(version));
  int actions = 0;
  std::size_t count = 0;
  if (!(is >> word >> actions) || word != "actions" || actions < 1) {
    throw FormatError("q-table: bad actions line");
  }
  if (!(is >> word >> count) || word != "states") throw FormatError("q-table: bad states line");
  QTable q(actions);
  std::string line;
  std::getline(is, line);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw FormatError("q-table: truncated");
    std::istringstream ls(line);
    std::size_t width = 0;
    if (!(ls >> word >> width) || word != "state") {
      throw FormatError("q-table: bad state record " + std::to_string(i));
    }
    StateKey key(width);
    for (auto& v : key)
      if (!(ls >> v)) throw FormatError("q-table: bad state key in record " + std::to_string(i));
    for (std::string tok; ls >> tok;) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw FormatError("q-table: bad entry '" + tok + "'");
      int a = 0;
      try {
        a = std::stoi(tok.substr(0, colon));
      } catch (const std::logic_error&) {
        throw FormatError("q-table: bad action in '" + tok + "'");
      }
      const int idx = q.insert(key, a);
      q.at(idx, a) = parse_double(tok.substr(colon + 1));
    }
  }
  if (!(is >> word) || word != "end") throw FormatError("q-table: missing end marker");
  return q;
}

QTable QTable::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open q-table '" + path + "'");
  return load(is);
}

bool operator==(const QTable& a, const QTable& b) {
  if (a.num_actions_ != b.num_actions_ || a.keys_.size() != b.keys_.size()) return false;
  for (const auto& s : a.keys_) {
    if (!b.contains(s)) return false;
    const int i = a.index_of(s), j = b.index_of(s);
    if (a.seen_.row(i) != b.seen_.row(j)) return false;
    for (int k = 0; k < a.num_actions_; ++k) {
      if (a.seen_(i, k) && a.values_(i, k) != b.values_(j, k)) return false;
    }
  }
  return true;
}

namespace {

struct Transition {
  int s;
  int a;
  double r;
  int next;  // -1 when the episode ends here or s' was never acted from
};

}  // namespace

QTable cql_fit(std::span<const Trajectory> trajectories, int num_actions, const CqlConfig& cfg) {
  cfg.validate();
  if (trajectories.empty()) throw Error("cql_fit: empty dataset");
  if (num_actions < 1) throw ConfigError("cql_fit: need at least one action");

  QTable q(num_actions);
  std::vector<Transition> data;
  for (const auto& traj : trajectories) {
    traj.validate();
    if (traj.actions.cols() != 1) throw ShapeError("cql_fit: actions must be single discrete ids");
    for (Index t = 0; t < traj.length(); ++t) {
      const int a = static_cast<int>(std::lround(traj.actions(t, 0)));
      data.push_back({q.insert(state_key(traj.states.row(t)), a), a, traj.rewards(t), -1});
    }
  }
  // Resolve successors once all acting states are known.
  std::size_t k = 0;
  for (const auto& traj : trajectories) {
    for (Index t = 0; t < traj.length(); ++t, ++k) {
      if (t + 1 < traj.length()) data[k].next = q.index_of(state_key(traj.states.row(t + 1)));
    }
  }

  std::vector<std::vector<int>> seen(q.num_states());
  for (std::size_t i = 0; i < q.num_states(); ++i) seen[i] = q.seen_actions(q.states()[i]);

  const double mu = 1.0 / num_actions;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const Transition& tr = data[idx];
      double next_value = 0.0;
      if (tr.next >= 0) {
        next_value = -std::numeric_limits<double>::infinity();
        for (int a : seen[tr.next]) next_value = std::max(next_value, q.at(tr.next, a));
      }
      const double y = tr.r + cfg.gamma * next_value;
      double& qsa = q.at(tr.s, tr.a);
      qsa += cfg.lr * (y - qsa);
      // mu-expectation gradient, applied over the materialized support.
      for (int a : seen[tr.s]) q.at(tr.s, a) -= cfg.lr * cfg.alpha * mu;
      if (cfg.maximize_data_q) qsa += cfg.lr * cfg.alpha;
    }
  }
  for (std::size_t i = 0; i < q.num_states(); ++i) {
    for (int a : seen[i])
      if (!std::isfinite(q.at(static_cast<int>(i), a))) throw NumericError("cql_fit: non-finite Q value");
  }
  return q;
}

QTable cql_fit(const Dataset& dataset, const CqlConfig& cfg) {
  if (!dataset.action_space.discrete()) throw ConfigError("cql_fit: action space must be discrete");
  return cql_fit(dataset.trajectories, static_cast<int>(dataset.action_space.size), cfg);
}

StateValue state_value(const QTable& q, const Eigen::Ref<const RowVector>& policy,
                       const StateKey& s) {
  if (policy.size() != q.num_actions()) {
    throw ShapeError("state_value: policy has " + std::to_string(policy.size()) +
                     " entries for " + std::to_string(q.num_actions()) + " actions");
  }
  if (std::abs(policy.sum() - 1.0) > 1e-6 || (policy.array() < 0.0).any()) {
    throw Error("state_value: policy row is not a distribution");
  }
  if (!q.contains(s)) return {0.0, false};
  return {q.row(s).dot(policy), true};
}

ValueFunction greedy_value_function(const QTable& q) {
  return [q](const Eigen::Ref<const RowVector>& state) {
    return q.greedy_value(state_key(state));
  };
}

}  // namespace edt
