#include "edt/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "edt/checkpoint.hpp"

namespace edt {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// key = value files
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& is) {
  KeyValueConfig kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  return parse(is);
}

const std::string& KeyValueConfig::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config is missing required key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_double(it->second);
  } catch (const FormatError&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string KeyValueConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "graph", "n", "seed", "K", "g_online", "rounds", "iterations", "batch_size", "capacity",
      "top_n", "step_cap", "pretrain_iterations", "relabel", "entropy", "loss",
      "refit_q_each_round", "refit_sweeps", "protect_seeds", "lr", "dual_lr", "init_lambda",
      "cql_alpha", "cql_gamma", "cql_lr", "cql_sweeps", "cql_maximize_data_q", "layers", "heads",
      "width", "action_dim", "max_timestep", "sigma_min", "sigma_max", "beta", "eval_episodes",
      "eval_mode"};
  return keys;
}

std::string fmt(double x) { return format_double(x); }
std::string fmt(bool b) { return b ? "true" : "false"; }

}  // namespace

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv, const std::string& base_dir) {
  for (const auto& [k, v] : kv.values()) {
    if (!known_keys().count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  ExperimentConfig c;
  c.graph = kv.require("graph");
  if (c.graph != "default" && !base_dir.empty() && fs::path(c.graph).is_relative()) {
    c.graph = (fs::path(base_dir) / c.graph).lexically_normal().string();
  }
  c.n = static_cast<int>(kv.get_int("n", c.n));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));

  TrainConfig& t = c.train;
  t.seed = c.seed;
  t.K = static_cast<int>(kv.get_int("K", t.K));
  t.g_online = kv.get_double("g_online", t.g_online);
  t.rounds = static_cast<int>(kv.get_int("rounds", t.rounds));
  t.iterations = static_cast<int>(kv.get_int("iterations", t.iterations));
  t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
  t.capacity = static_cast<int>(kv.get_int("capacity", t.capacity));
  t.top_n = static_cast<int>(kv.get_int("top_n", t.top_n));
  t.step_cap = static_cast<int>(kv.get_int("step_cap", t.step_cap));
  t.pretrain_iterations = static_cast<int>(kv.get_int("pretrain_iterations", t.pretrain_iterations));
  t.relabel = kv.get_bool("relabel", t.relabel);
  t.entropy = kv.get_bool("entropy", t.entropy);
  const std::string loss = kv.get("loss", "nll");
  if (loss != "nll" && loss != "l2") throw ConfigError("config key 'loss' must be nll or l2");
  t.loss = loss == "nll" ? LossKind::kNll : LossKind::kL2;
  t.refit_q_each_round = kv.get_bool("refit_q_each_round", t.refit_q_each_round);
  t.refit_sweeps = static_cast<int>(kv.get_int("refit_sweeps", t.refit_sweeps));
  t.protect_seeds = kv.get_bool("protect_seeds", t.protect_seeds);
  t.lr = kv.get_double("lr", t.lr);
  t.dual_lr = kv.get_double("dual_lr", t.dual_lr);
  t.init_lambda = kv.get_double("init_lambda", t.init_lambda);
  t.cql.alpha = kv.get_double("cql_alpha", t.cql.alpha);
  t.cql.gamma = kv.get_double("cql_gamma", t.cql.gamma);
  t.cql.lr = kv.get_double("cql_lr", t.cql.lr);
  t.cql.sweeps = static_cast<int>(kv.get_int("cql_sweeps", t.cql.sweeps));
  t.cql.maximize_data_q = kv.get_bool("cql_maximize_data_q", t.cql.maximize_data_q);
  t.cql.seed = c.seed;
  t.validate();

  PolicyConfig& a = c.arch;
  a.layers = static_cast<int>(kv.get_int("layers", a.layers));
  a.heads = static_cast<int>(kv.get_int("heads", a.heads));
  a.width = static_cast<int>(kv.get_int("width", a.width));
  a.action_dim = kv.get_int("action_dim", a.action_dim);
  a.max_timestep = static_cast<int>(kv.get_int("max_timestep", a.max_timestep));
  a.sigma_min = kv.get_double("sigma_min", a.sigma_min);
  a.sigma_max = kv.get_double("sigma_max", a.sigma_max);
  if (kv.has("beta")) a.beta = kv.get_double("beta", 0.0);
  a.K = t.K;
  a.seed = c.seed;

  c.eval_episodes = static_cast<int>(kv.get_int("eval_episodes", c.eval_episodes));
  const std::string mode = kv.get("eval_mode", "mean");
  if (mode != "mean" && mode != "stochastic") {
    throw ConfigError("config key 'eval_mode' must be mean or stochastic");
  }
  c.eval_mode = mode == "mean" ? SampleMode::kMean : SampleMode::kStochastic;
  if (c.n < 1) throw ConfigError("config key 'n' must be >= 1");
  if (c.eval_episodes < 1) throw ConfigError("config key 'eval_episodes' must be >= 1");
  return c;
}

KeyValueConfig ExperimentConfig::resolved() const {
  KeyValueConfig kv;
  const TrainConfig& t = train;
  kv.set("graph", graph);
  kv.set("n", std::to_string(n));
  kv.set("seed", std::to_string(seed));
  kv.set("K", std::to_string(t.K));
  kv.set("g_online", fmt(t.g_online));
  kv.set("rounds", std::to_string(t.rounds));
  kv.set("iterations", std::to_string(t.iterations));
  kv.set("batch_size", std::to_string(t.batch_size));
  kv.set("capacity", std::to_string(t.capacity));
  kv.set("top_n", std::to_string(t.top_n));
  kv.set("step_cap", std::to_string(t.step_cap));
  kv.set("pretrain_iterations", std::to_string(t.pretrain_iterations));
  kv.set("relabel", fmt(t.relabel));
  kv.set("entropy", fmt(t.entropy));
  kv.set("loss", t.loss == LossKind::kNll ? "nll" : "l2");
  kv.set("refit_q_each_round", fmt(t.refit_q_each_round));
  kv.set("refit_sweeps", std::to_string(t.refit_sweeps));
  kv.set("protect_seeds", fmt(t.protect_seeds));
  kv.set("lr", fmt(t.lr));
  kv.set("dual_lr", fmt(t.dual_lr));
  kv.set("init_lambda", fmt(t.init_lambda));
  kv.set("cql_alpha", fmt(t.cql.alpha));
  kv.set("cql_gamma", fmt(t.cql.gamma));
  kv.set("cql_lr", fmt(t.cql.lr));
  kv.set("cql_sweeps", std::to_string(t.cql.sweeps));
  kv.set("cql_maximize_data_q", fmt(t.cql.maximize_data_q));
  kv.set("layers", std::to_string(arch.layers));
  kv.set("heads", std::to_string(arch.heads));
  kv.set("width", std::to_string(arch.width));
  kv.set("action_dim", std::to_string(arch.action_dim));
  kv.set("max_timestep", std::to_string(arch.max_timestep));
  kv.set("sigma_min", fmt(arch.sigma_min));
  kv.set("sigma_max", fmt(arch.sigma_max));
  kv.set("beta", fmt(arch.entropy_target()));
  kv.set("eval_episodes", std::to_string(eval_episodes));
  kv.set("eval_mode", eval_mode == SampleMode::kMean ? "mean" : "stochastic");
  return kv;
}

ItemGraph ExperimentConfig::load_graph() const {
  return graph == "default" ? default_stitch_graph() : ItemGraph::load(graph);
}

std::vector<std::string> ArtifactNames::all() {
  return {kDataset, kQTable, kRelabeled, kRelabelReport, kPretrain, kFinetune, kMetrics};
}

// ---------------------------------------------------------------------------
// Metric records
// ---------------------------------------------------------------------------

std::string pretrain_record(int iteration, const StepStats& s) {
  nlohmann::json j{{"phase", "pretrain"}, {"iteration", iteration}, {"loss", s.loss},
                   {"nll", s.nll},        {"entropy", s.entropy},   {"lambda", s.lambda}};
  return j.dump();
}

std::string round_record(const RoundMetrics& m) {
  nlohmann::json j{{"phase", "finetune"},
                   {"round", m.round},
                   {"return", m.rollout_return},
                   {"length", m.rollout_length},
                   {"path", m.rollout_path},
                   {"loss", m.loss},
                   {"nll", m.nll},
                   {"entropy", m.entropy},
                   {"lambda", m.lambda},
                   {"buffer_size", m.buffer_size},
                   {"evicted", m.evicted}};
  return j.dump();
}

std::string eval_record(const EvalReport& r) {
  nlohmann::json j{{"phase", "eval"},
                   {"episodes", r.episodes},
                   {"mean_return", r.mean_return},
                   {"stdev_return", r.stdev_return},
                   {"stitch_rate", r.stitch_rate},
                   {"success_rate", r.success_rate}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error(std::string("stage '") + name + "' failed: " + e.what());
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  auto at = [&](const char* name) { return (dir / name).string(); };
  {
    std::ofstream os(at(ArtifactNames::kResolvedConfig));
    os << cfg.resolved().to_text();
  }

  const ItemGraph graph = stage("gen-data", [&] { return cfg.load_graph(); });
  const Dataset dataset = stage("gen-data", [&] {
    Dataset d = generate_offline_dataset(graph, default_logging_policies(graph), cfg.n, cfg.seed,
                                         cfg.train.step_cap);
    save_dataset(at(ArtifactNames::kDataset), d);
    return d;
  });

  const QTable q = stage("fit-q", [&] {
    QTable t = cql_fit(dataset, cfg.train.cql);
    t.save(at(ArtifactNames::kQTable));
    return t;
  });

  const Dataset relabeled = stage("relabel", [&] {
    Dataset d = dataset;
    const RelabelReport report = relabel_dataset(d, greedy_value_function(q));
    save_dataset(at(ArtifactNames::kRelabeled), d);
    report.write(at(ArtifactNames::kRelabelReport));
    return d;
  });

  std::ofstream metrics(at(ArtifactNames::kMetrics));
  if (!metrics) throw Error("cannot write metrics log in '" + out_dir + "'");

  PretrainResult pre = stage("pretrain", [&] {
    PretrainResult r = pretrain_offline(cfg.train.relabel ? relabeled : dataset, cfg.train, cfg.arch);
    r.policy.save(at(ArtifactNames::kPretrain), r.omega);
    return r;
  });
  for (std::size_t i = 0; i < pre.history.size(); ++i) {
    metrics << pretrain_record(static_cast<int>(i), pre.history[i]) << '\n';
  }

  FinetuneResult fine = stage("finetune", [&] {
    FinetuneResult r = finetune_online(graph, dataset, std::move(pre.policy), pre.omega, cfg.train);
    r.policy.save(at(ArtifactNames::kFinetune), r.omega);
    return r;
  });
  for (const auto& m : fine.rounds) metrics << round_record(m) << '\n';

  ExperimentResult res;
  res.out_dir = out_dir;
  res.eval = stage("eval", [&] {
    return evaluate_policy(graph, fine.policy, dataset, cfg.eval_episodes, cfg.train.g_online,
                           cfg.eval_mode, cfg.seed);
  });
  metrics << eval_record(res.eval) << '\n';
  res.rounds = std::move(fine.rounds);
  return res;
}

}  // namespace edt
