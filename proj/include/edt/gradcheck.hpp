#pragma once

#include <functional>
#include <string>

#include "edt/tape.hpp"

namespace edt {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  /// Differences below this are treated as agreement regardless of scale.
  double abs_floor = 1e-6;
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  int coords_per_tensor = 0;
  unsigned long long seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index checked = 0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Compares the analytic gradient of `loss` (built on a fresh tape from the
/// current parameter values) with central differences on every trainable
/// entry of `params`. `loss` must be deterministic.
GradCheckResult check_gradients(ParameterSet& params,
                                const std::function<Var(Tape&, ParameterSet&)>& loss,
                                const GradCheckOptions& opts = {});

}  // namespace edt
