#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "edt/eval.hpp"
#include "edt/trainer.hpp"

namespace edt {

/// Plain `key = value` text, `#` comments. Later assignments win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is);
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  /// Throws ConfigError naming `key` when absent.
  const std::string& require(const std::string& key) const;

  std::string get(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

struct ExperimentConfig {
  /// Graph file path, or "default" for the built-in stitching graph.
  std::string graph = "default";
  int n = 300;
  std::uint64_t seed = 0;
  TrainConfig train;
  PolicyConfig arch;
  int eval_episodes = 200;
  SampleMode eval_mode = SampleMode::kMean;

  /// Reads every known key; unknown keys are rejected. `graph` is required.
  /// Relative graph paths are resolved against `base_dir`.
  static ExperimentConfig from(const KeyValueConfig& kv, const std::string& base_dir = "");
  /// Every key with its effective value.
  KeyValueConfig resolved() const;
  ItemGraph load_graph() const;
};

/// File names written by run_experiment, in pipeline order.
struct ArtifactNames {
  static constexpr const char* kDataset = "dataset.jsonl";
  static constexpr const char* kQTable = "qtable.txt";
  static constexpr const char* kRelabeled = "relabeled.jsonl";
  static constexpr const char* kRelabelReport = "relabel_report.jsonl";
  static constexpr const char* kPretrain = "pretrain.ckpt";
  static constexpr const char* kFinetune = "finetune.ckpt";
  static constexpr const char* kMetrics = "metrics.jsonl";
  static constexpr const char* kResolvedConfig = "resolved.conf";
  static std::vector<std::string> all();
};

struct ExperimentResult {
  EvalReport eval;
  std::vector<RoundMetrics> rounds;
  std::string out_dir;
};

/// gen-data -> fit-q -> relabel -> pretrain -> finetune -> eval. A failing
/// stage aborts with an Error naming the stage.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

/// Line-delimited metric records shared by the CLI and run_experiment.
std::string pretrain_record(int iteration, const StepStats& s);
std::string round_record(const RoundMetrics& m);
std::string eval_record(const EvalReport& r);

}  // namespace edt
