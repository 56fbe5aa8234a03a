#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "edt/trajectory.hpp"

namespace edt {

/// State-value estimate evaluated on one state row.
using ValueFunction = std::function<double(const Eigen::Ref<const RowVector>& state)>;

/// Backward value-guided recursion with R_T = 0 and V(s_T) = 0:
///   R_t = r_t + max(R_{t+1}, V(s_{t+1})).
/// `values[t]` is V(s_t) for t = 0..T-1.
template <typename DerivedR, typename DerivedV>
VectorX<typename DerivedR::Scalar> relabel_rtg(const Eigen::MatrixBase<DerivedR>& rewards,
                                              const Eigen::MatrixBase<DerivedV>& values) {
  using Scalar = typename DerivedR::Scalar;
  const Index n = rewards.size();
  if (values.size() != n) {
    throw ShapeError("relabel_rtg: " + std::to_string(values.size()) + " values for " +
                     std::to_string(n) + " rewards");
  }
  if (!all_finite(values)) throw NumericError("relabel_rtg: non-finite state value");
  VectorX<Scalar> out(n);
  Scalar next_rtg(0);
  Scalar next_value(0);
  for (Index t = n - 1; t >= 0; --t) {
    out(t) = rewards(t) + std::max(next_rtg, next_value);
    next_rtg = out(t);
    next_value = values(t);
  }
  return out;
}

Vector relabel_rtg(const Trajectory& traj, const ValueFunction& value);

/// Regenerates a consistent window of RTGs from the anchor R_t and the window
/// rewards r_{t-K+1..t-1}: out.back() = anchor, out[k] = r[k] + out[k+1].
template <typename Derived>
VectorX<typename Derived::Scalar> regenerate_window_rtg(
    const Eigen::MatrixBase<Derived>& window_rewards, typename Derived::Scalar anchor) {
  const Index k = window_rewards.size() + 1;
  VectorX<typename Derived::Scalar> out(k);
  out(k - 1) = anchor;
  for (Index i = k - 2; i >= 0; --i) out(i) = window_rewards(i) + out(i + 1);
  return out;
}

struct RelabelEntry {
  /// Positions where V(s_{t+1}) exceeded the propagated R_{t+1}.
  int lifted_positions = 0;
  double max_uplift = 0.0;
  Vector original;
  Vector relabeled;
};

struct RelabelReport {
  std::vector<RelabelEntry> entries;

  int total_lifted() const;
  double max_uplift() const;
  /// One JSON record per trajectory.
  void write(const std::string& path) const;
};

/// Fills rtg_relabel on every trajectory.
RelabelReport relabel_dataset(Dataset& dataset, const ValueFunction& value);
RelabelEntry relabel_trajectory(Trajectory& traj, const ValueFunction& value);

}  // namespace edt
