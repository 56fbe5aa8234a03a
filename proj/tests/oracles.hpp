#pragma once

// Independent reference implementations used only by tests. None of these
// call into the code they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "edt/envsim.hpp"
#include "edt/tape.hpp"

namespace oracle {

using edt::Index;
using edt::Matrix;

/// Central difference of f with respect to x(i, j).
inline double central_difference(const std::function<double()>& f, Matrix& x, Index i, Index j,
                                 double h = 1e-5) {
  const double saved = x(i, j);
  x(i, j) = saved + h;
  const double up = f();
  x(i, j) = saved - h;
  const double down = f();
  x(i, j) = saved;
  return (up - down) / (2.0 * h);
}

/// Relative error with an absolute floor: differences below `floor` count as 0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct FdReport {
  double max_rel = 0.0;
  int checked = 0;
};

/// Compares analytic gradients (already stored in `grads`, aligned with `inputs`)
/// against central differences of `f` at up to `coords` random coordinates per
/// input (all when coords <= 0). Differences below `floor` are treated as
/// round-off; it should scale with |f| since FD noise is about eps*|f|/h.
inline FdReport check_inputs(const std::function<double()>& f, std::vector<Matrix*> inputs,
                             const std::vector<Matrix>& grads, int coords, std::mt19937_64& rng,
                             double floor = 1e-6) {
  FdReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix& x = *inputs[k];
    std::vector<Index> idx(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (coords > 0 && idx.size() > static_cast<std::size_t>(coords)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(coords));
    }
    for (Index flat : idx) {
      const Index i = flat / x.cols(), j = flat % x.cols();
      const double numeric = central_difference(f, x, i, j);
      rep.max_rel = std::max(rep.max_rel, relative_error(grads[k](i, j), numeric, floor));
      ++rep.checked;
    }
  }
  return rep;
}

/// R_t = max( sum_{i>=t} r_i , max_{j>t} sum_{t<=i<j} r_i + V(s_j) ), which is
/// what the backward max-recursion unrolls to.
inline std::vector<double> brute_force_relabel(const std::vector<double>& r,
                                               const std::vector<double>& v) {
  const std::size_t n = r.size();
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    double prefix = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = t + 1; j <= n; ++j) {
      prefix += r[j - 1];
      const double tail = j < n ? v[j] : 0.0;
      best = std::max(best, prefix + tail);
    }
    out[t] = best;
  }
  return out;
}

/// Deterministic tabular MDP recovered from logged transitions.
struct EmpiricalMdp {
  using State = std::vector<int>;
  struct Edge {
    double reward;
    State next;
    bool done;
  };
  std::map<std::pair<State, int>, Edge> edges;
  std::map<State, std::vector<int>> actions;

  static EmpiricalMdp from(const edt::Dataset& d) {
    EmpiricalMdp m;
    for (const auto& t : d.trajectories) {
      for (Index i = 0; i < t.length(); ++i) {
        State s{static_cast<int>(t.states(i, 0)), static_cast<int>(t.states(i, 1))};
        const int a = static_cast<int>(t.actions(i, 0));
        const bool done = i + 1 == t.length();
        State next = done ? State{} : State{static_cast<int>(t.states(i + 1, 0)),
                                            static_cast<int>(t.states(i + 1, 1))};
        if (!m.edges.count({s, a})) {
          m.edges[{s, a}] = {t.rewards(i), next, done};
          m.actions[s].push_back(a);
        }
      }
    }
    return m;
  }

  /// Optimal Q by recursion over the acyclic empirical MDP (gamma = 1).
  double q_star(const State& s, int a) const {
    const Edge& e = edges.at({s, a});
    if (e.done || !actions.count(e.next)) return e.reward;
    double best = -std::numeric_limits<double>::infinity();
    for (int b : actions.at(e.next)) best = std::max(best, q_star(e.next, b));
    return e.reward + best;
  }
};

/// Exact value of a deterministic policy on the true graph, from item `at`
/// with previous item `prev`.
inline double policy_value(const edt::ItemGraph& g, int at, int prev,
                           const std::function<int(int, int)>& policy) {
  if (g.is_terminal(at)) return 0.0;
  const int next = policy(at, prev);
  const double r = g.is_terminal(next) ? g.terminal_reward(next) : 0.0;
  return r + policy_value(g, next, at, policy);
}

/// Expected return of the uniform-random policy from `at`.
inline double uniform_value(const edt::ItemGraph& g, int at) {
  if (g.is_terminal(at)) return g.terminal_reward(at);
  const auto& succ = g.successors(at);
  double v = 0.0;
  for (int s : succ) v += uniform_value(g, s);
  return v / static_cast<double>(succ.size());
}

}  // namespace oracle
