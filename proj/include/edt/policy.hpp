#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "edt/adam.hpp"
#include "edt/tape.hpp"
#include "edt/trajectory.hpp"

namespace edt {

struct PolicyConfig {
  int layers = 2;
  int heads = 2;
  int width = 32;
  int K = 2;
  /// Encoded feature widths (filled from the Encoding when built from data).
  Index state_dim = 0;
  Index action_dim = 8;
  /// Timesteps at or beyond this share the last embedding row.
  int max_timestep = 64;
  double sigma_min = 1e-2;
  double sigma_max = 5.0;
  /// Entropy floor; NaN selects default_entropy_target(action_dim).
  double beta = std::numeric_limits<double>::quiet_NaN();
  /// Replaces the log-variance head with a constant when set.
  std::optional<double> fixed_logvar;
  int ffn_mult = 4;
  std::uint64_t seed = 0;

  double logvar_min() const { return 2.0 * std::log(sigma_min); }
  double logvar_max() const { return 2.0 * std::log(sigma_max); }
  double entropy_target() const;
  void validate() const;

  std::map<std::string, std::string> to_metadata() const;
  static PolicyConfig from_metadata(const std::map<std::string, std::string>& meta);
};

/// Maps raw dataset rows to network features. Discrete states become
/// one-hot blocks (one per column, id 0 = pad); discrete actions become rows
/// of a fixed embedding table (row 0 = zeros). Continuous spaces pass through.
struct Encoding {
  SpaceDescriptor state_space;
  SpaceDescriptor action_space;
  /// (num_items + 1) x action_dim for discrete actions, empty otherwise.
  Matrix action_embedding;

  static Encoding make(const SpaceDescriptor& states, const SpaceDescriptor& actions,
                       Index action_dim, std::uint64_t seed);

  Index state_dim() const;
  Index action_dim() const;
  RowVector encode_state(const Eigen::Ref<const RowVector>& raw) const;
  RowVector encode_action(const Eigen::Ref<const RowVector>& raw) const;
  /// Nearest legal item (Euclidean) to `action`. Throws InvalidAction when
  /// `legal` is empty.
  int decode(const Eigen::Ref<const RowVector>& action, std::span<const int> legal) const;
};

/// B windows of K steps, flattened row b*K + k.
struct Batch {
  Index B = 0;
  Index K = 0;
  Matrix rtg;
  Matrix states;
  Matrix actions;
  std::vector<int> timesteps;
  std::vector<bool> mask;

  Index rows() const { return B * K; }
  Index valid_count() const;
};

/// Per-position Gaussian head outputs, rows aligned with Batch rows.
struct PolicyOutput {
  Var mean;
  Var logvar;
};

struct ActionDistribution {
  RowVector mean;
  RowVector logvar;
};

class Policy {
 public:
  Policy() = default;
  Policy(PolicyConfig cfg, Encoding enc);

  const PolicyConfig& config() const { return cfg_; }
  const Encoding& encoding() const { return enc_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  Batch make_batch(std::span<const ContextWindow> windows) const;

  /// Causal transformer over (g_1, s_1, a_1, ..., g_K, s_K, a_K) per window.
  /// The action at position k is predicted from the output at s_k, so a_k
  /// never informs its own prediction.
  PolicyOutput forward(Tape& tape, const Batch& batch, ParameterSet& params) const;
  PolicyOutput forward(Tape& tape, const Batch& batch) { return forward(tape, batch, params_); }

  /// Distribution at the last position of `window`.
  ActionDistribution predict(const ContextWindow& window) const;

  void save(const std::string& path, double omega) const;
  /// Returns the policy and the stored dual variable omega.
  static std::pair<Policy, double> load(const std::string& path);

 private:
  void init_params();

  PolicyConfig cfg_;
  Encoding enc_;
  ParameterSet params_;
};

/// Window whose last position is the current decision point: `states` has
/// t+1 rows, `actions` t rows and `rtg` t+1 entries (raw, unencoded).
ContextWindow inference_window(const Matrix& states, const Matrix& actions, const Vector& rtg,
                               int K);

// Losses over the unmasked rows of a batch. Each averages over positions and
// sums over action dimensions.
Var gaussian_nll_loss(const PolicyOutput& out, const Batch& batch);
Var gaussian_entropy_loss(const PolicyOutput& out, const Batch& batch);
/// Squared-error action prediction baseline.
Var l2_action_loss(const PolicyOutput& out, const Batch& batch);

/// Entropy multiplier lambda = exp(omega), omega clamped to [-20, 10].
class DualVariable {
 public:
  explicit DualVariable(double lambda = 1.0, AdamOptions opts = {1e-2});

  double lambda() const;
  double omega() const { return omega_(0, 0); }
  void set_omega(double w);
  void set_lambda(double l) { set_omega(std::log(l)); }

  /// One descent step on exp(omega) * (entropy - beta) with entropy held fixed.
  /// Returns the omega gradient lambda * (entropy - beta).
  double step(double entropy, double beta);
  const Adam& optimizer() const { return adam_; }

  static constexpr double kOmegaMin = -20.0;
  static constexpr double kOmegaMax = 10.0;

 private:
  Matrix omega_;
  Adam adam_;
};

enum class LossKind { kNll, kL2 };

struct StepOptions {
  LossKind loss = LossKind::kNll;
  /// Off: lambda is treated as 0 and the dual is never updated.
  bool entropy = true;
  /// Off: lambda stays fixed at its current value.
  bool update_dual = true;
};

struct StepStats {
  double loss = 0.0;
  double nll = 0.0;
  double entropy = 0.0;
  double lambda = 0.0;
};

/// One theta step on J - lambda * H (lambda constant), then one dual step.
StepStats lagrangian_step(Policy& policy, const Batch& batch, DualVariable& dual,
                          Adam& theta_opt, const StepOptions& opts = {});

enum class SampleMode { kStochastic, kMean };

RowVector sample_action(const ActionDistribution& dist, SampleMode mode, std::mt19937_64& rng);

}  // namespace edt
