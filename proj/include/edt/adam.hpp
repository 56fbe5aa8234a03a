#pragma once

#include <string>
#include <unordered_map>

#include "edt/tape.hpp"

namespace edt {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment optimiser. Moments are keyed by parameter
/// name and created lazily with the parameter's shape.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions opts) : opts_(opts) {}

  /// Applies one update to every trainable entry using its stored gradient.
  /// The step counter advances by exactly one per call.
  void step(ParameterSet& params);

  /// Single-tensor form. `key` identifies the moment slot.
  void step(const std::string& key, Matrix& param, const Matrix& grad);

  long step_count() const { return step_; }
  const AdamOptions& options() const { return opts_; }
  AdamOptions& options() { return opts_; }
  const Matrix& first_moment(const std::string& key) const { return slots_.at(key).m; }
  const Matrix& second_moment(const std::string& key) const { return slots_.at(key).v; }

 private:
  struct Slot {
    Matrix m;
    Matrix v;
  };
  void update(Slot& slot, Matrix& param, const Matrix& grad, long t) const;
  Slot& slot_for(const std::string& key, const Matrix& param);

  AdamOptions opts_;
  long step_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace edt
