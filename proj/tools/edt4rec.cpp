// Command-line front end for the EDT4Rec pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "edt/experiment.hpp"
#include "edt/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace edt;

namespace {

/// Options that map onto experiment config keys. A flag given on the command
/// line overrides the same key from --config.
struct KeyedOptions {
  std::map<std::string, std::string> values;
  std::vector<std::pair<CLI::Option*, std::string>> bound;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    bound.emplace_back(app->add_option(flag, values[key], help), key);
  }
  void apply(KeyValueConfig& kv) const {
    for (const auto& [opt, key] : bound)
      if (opt->count() > 0) kv.set(key, values.at(key));
  }
};

void add_arch_flags(CLI::App* app, KeyedOptions& ko) {
  ko.add(app, "--layers", "layers", "transformer blocks");
  ko.add(app, "--heads", "heads", "attention heads");
  ko.add(app, "--width", "width", "embedding width");
  ko.add(app, "--beta", "beta", "entropy floor");
  ko.add(app, "--sigma-min", "sigma_min", "smallest action std");
  ko.add(app, "--sigma-max", "sigma_max", "largest action std");
}

void add_train_flags(CLI::App* app, KeyedOptions& ko) {
  ko.add(app, "--K", "K", "context length");
  ko.add(app, "--batch-size", "batch_size", "windows per update");
  ko.add(app, "--lr", "lr", "policy learning rate");
  ko.add(app, "--relabel", "relabel", "value-guided RTG relabeling (true/false)");
  ko.add(app, "--entropy", "entropy", "entropy constraint (true/false)");
  ko.add(app, "--loss", "loss", "nll or l2");
}

std::string out_path(const std::string& explicit_path, const std::string& out_dir,
                     const std::string& fallback_name) {
  if (!explicit_path.empty()) return explicit_path;
  fs::create_directories(out_dir);
  return (fs::path(out_dir) / fallback_name).string();
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  for (const auto& l : lines) os << l << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Max-entropy decision transformer with value-guided RTG relabeling"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand (e.g. `gen-data --seed 3`).
  app.fallthrough();

  std::string config_path, out_dir = ".";
  long long seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_option("--out-dir", out_dir, "directory for outputs without an explicit path");
  app.add_option("--config", config_path, "key = value config file");

  KeyedOptions ko;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate an offline dataset from an item graph");
  std::string gen_graph = "default", gen_out;
  int gen_n = 300;
  gen->add_option("--graph", gen_graph, "graph file, or 'default'");
  gen->add_option("--n", gen_n, "number of trajectories");
  gen->add_option("--out", gen_out, "dataset path");

  // fit-q
  auto* fitq = app.add_subcommand("fit-q", "fit a tabular conservative Q function");
  std::string fq_dataset, fq_out;
  fitq->add_option("--dataset", fq_dataset)->required();
  fitq->add_option("--out", fq_out, "q-table path");
  ko.add(fitq, "--alpha", "cql_alpha", "conservatism weight");
  ko.add(fitq, "--gamma", "cql_gamma", "discount");
  ko.add(fitq, "--sweeps", "cql_sweeps", "passes over the data");
  ko.add(fitq, "--maximize-data-q", "cql_maximize_data_q", "include the data-maximization term");

  // relabel
  auto* rel = app.add_subcommand("relabel", "relabel returns-to-go with a fitted Q");
  std::string rl_dataset, rl_qtable, rl_out, rl_report;
  rel->add_option("--dataset", rl_dataset)->required();
  rel->add_option("--qtable", rl_qtable)->required();
  rel->add_option("--out", rl_out, "relabeled dataset path");
  rel->add_option("--report", rl_report, "relabel report path");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "offline pretraining");
  std::string pt_dataset, pt_out, pt_metrics;
  pre->add_option("--dataset", pt_dataset)->required();
  pre->add_option("--out", pt_out, "checkpoint path");
  pre->add_option("--metrics", pt_metrics, "metrics log path");
  ko.add(pre, "--iterations", "pretrain_iterations", "gradient updates");
  add_arch_flags(pre, ko);
  add_train_flags(pre, ko);

  // finetune
  auto* fin = app.add_subcommand("finetune", "online finetuning against an item graph");
  std::string ft_graph = "default", ft_dataset, ft_ckpt, ft_out, ft_metrics;
  fin->add_option("--graph", ft_graph, "graph file, or 'default'");
  fin->add_option("--dataset", ft_dataset, "offline dataset used to seed the buffer")->required();
  fin->add_option("--ckpt", ft_ckpt, "pretrained checkpoint")->required();
  fin->add_option("--out", ft_out, "checkpoint path");
  fin->add_option("--metrics", ft_metrics, "metrics log path");
  ko.add(fin, "--g-online", "g_online", "exploration RTG");
  ko.add(fin, "--rounds", "rounds", "finetuning rounds");
  ko.add(fin, "--iterations", "iterations", "updates per round");
  ko.add(fin, "--capacity", "capacity", "replay buffer capacity");
  ko.add(fin, "--top-n", "top_n", "seed trajectories");
  ko.add(fin, "--protect-seeds", "protect_seeds", "keep seed trajectories out of FIFO eviction");
  add_train_flags(fin, ko);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on an item graph");
  std::string ev_graph = "default", ev_ckpt, ev_dataset, ev_out, ev_mode = "mean";
  int ev_episodes = 200;
  double ev_g = 2.0;
  ev->add_option("--graph", ev_graph, "graph file, or 'default'");
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--dataset", ev_dataset, "offline dataset for the stitch rate")->required();
  ev->add_option("--episodes", ev_episodes);
  ev->add_option("--g", ev_g, "conditioning RTG");
  ev->add_option("--mode", ev_mode, "mean or stochastic");
  ev->add_option("--out", ev_out, "report path");

  // rank-eval
  auto* rk = app.add_subcommand("rank-eval", "recall/precision/nDCG on held-out interactions");
  std::string rk_ckpt, rk_dataset;
  int rk_k = 5;
  rk->add_option("--ckpt", rk_ckpt)->required();
  rk->add_option("--dataset", rk_dataset, "held-out dataset")->required();
  rk->add_option("--k", rk_k);

  // ingest-ratings
  auto* ing = app.add_subcommand("ingest-ratings", "convert a user,item,rating,timestamp log");
  std::string ig_log, ig_out;
  IngestOptions ig_opts;
  ing->add_option("--log", ig_log)->required();
  ing->add_option("--out", ig_out, "dataset path");
  ing->add_option("--max-rating", ig_opts.max_rating);
  ing->add_option("--window", ig_opts.window);

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the policy loss");
  int gc_seeds = 20, gc_width = 16, gc_layers = 2, gc_coords = 8;
  gc->add_option("--seeds", gc_seeds);
  gc->add_option("--width", gc_width);
  gc->add_option("--layers", gc_layers);
  gc->add_option("--coords", gc_coords, "coordinates per tensor (0 = all)");

  // run
  auto* run = app.add_subcommand("run", "full pipeline into --out-dir");
  ko.add(run, "--graph", "graph", "graph file, or 'default'");
  ko.add(run, "--rounds", "rounds", "finetuning rounds");
  ko.add(run, "--g-online", "g_online", "exploration RTG");
  add_train_flags(run, ko);
  add_arch_flags(run, ko);

  CLI11_PARSE(app, argc, argv);

  try {
    KeyValueConfig kv;
    std::string base_dir;
    if (!config_path.empty()) {
      kv = KeyValueConfig::load(config_path);
      base_dir = fs::path(config_path).parent_path().string();
    }
    ko.apply(kv);
    if (seed_opt->count() > 0) kv.set("seed", std::to_string(seed));
    if (!run->parsed() && !kv.has("graph")) kv.set("graph", "default");
    const ExperimentConfig cfg = ExperimentConfig::from(kv, base_dir);

    if (gen->parsed()) {
      const ItemGraph g = gen_graph == "default" ? default_stitch_graph() : ItemGraph::load(gen_graph);
      const Dataset d = generate_offline_dataset(g, default_logging_policies(g), gen_n, cfg.seed);
      const std::string path = out_path(gen_out, out_dir, ArtifactNames::kDataset);
      save_dataset(path, d);
      std::cout << "wrote " << d.size() << " trajectories to " << path << '\n';
    } else if (fitq->parsed()) {
      const QTable q = cql_fit(load_dataset(fq_dataset), cfg.train.cql);
      const std::string path = out_path(fq_out, out_dir, ArtifactNames::kQTable);
      q.save(path);
      std::cout << "wrote q-table over " << q.num_states() << " states to " << path << '\n';
    } else if (rel->parsed()) {
      Dataset d = load_dataset(rl_dataset);
      const QTable q = QTable::load(rl_qtable);
      const RelabelReport report = relabel_dataset(d, greedy_value_function(q));
      save_dataset(out_path(rl_out, out_dir, ArtifactNames::kRelabeled), d);
      report.write(out_path(rl_report, out_dir, ArtifactNames::kRelabelReport));
      std::cout << "lifted " << report.total_lifted() << " positions, max uplift "
                << report.max_uplift() << '\n';
    } else if (pre->parsed()) {
      const PretrainResult r = pretrain_offline(load_dataset(pt_dataset), cfg.train, cfg.arch);
      const std::string path = out_path(pt_out, out_dir, ArtifactNames::kPretrain);
      r.policy.save(path, r.omega);
      std::vector<std::string> lines;
      for (std::size_t i = 0; i < r.history.size(); ++i)
        lines.push_back(pretrain_record(static_cast<int>(i), r.history[i]));
      write_lines(out_path(pt_metrics, out_dir, "pretrain_metrics.jsonl"), lines);
      std::cout << "wrote " << path << '\n';
    } else if (fin->parsed()) {
      const ItemGraph g = ft_graph == "default" ? default_stitch_graph() : ItemGraph::load(ft_graph);
      auto [policy, omega] = Policy::load(ft_ckpt);
      const FinetuneResult r =
          finetune_online(g, load_dataset(ft_dataset), std::move(policy), omega, cfg.train);
      const std::string path = out_path(ft_out, out_dir, ArtifactNames::kFinetune);
      r.policy.save(path, r.omega);
      std::vector<std::string> lines;
      for (const auto& m : r.rounds) lines.push_back(round_record(m));
      write_lines(out_path(ft_metrics, out_dir, "finetune_metrics.jsonl"), lines);
      std::cout << "wrote " << path << '\n';
    } else if (ev->parsed()) {
      if (ev_mode != "mean" && ev_mode != "stochastic") throw ConfigError("--mode must be mean or stochastic");
      const ItemGraph g = ev_graph == "default" ? default_stitch_graph() : ItemGraph::load(ev_graph);
      const auto [policy, omega] = Policy::load(ev_ckpt);
      const EvalReport rep = evaluate_policy(
          g, policy, load_dataset(ev_dataset), ev_episodes, ev_g,
          ev_mode == "mean" ? SampleMode::kMean : SampleMode::kStochastic, cfg.seed);
      rep.write(out_path(ev_out, out_dir, "eval.jsonl"), g);
      std::cout << eval_record(rep) << '\n';
    } else if (rk->parsed()) {
      const auto [policy, omega] = Policy::load(rk_ckpt);
      const RankMetrics m = rank_metrics(policy, load_dataset(rk_dataset), rk_k);
      std::cout << "{\"k\":" << rk_k << ",\"states\":" << m.states << ",\"recall\":" << m.recall
                << ",\"precision\":" << m.precision << ",\"ndcg\":" << m.ndcg << "}\n";
    } else if (ing->parsed()) {
      const Dataset d = ingest_ratings(read_rating_log(ig_log), ig_opts);
      const std::string path = out_path(ig_out, out_dir, ArtifactNames::kDataset);
      save_dataset(path, d);
      std::cout << "wrote " << d.size() << " user trajectories to " << path << '\n';
    } else if (gc->parsed()) {
      const ItemGraph g = default_stitch_graph();
      const Dataset d = generate_offline_dataset(g, default_logging_policies(g), 6, 0);
      double worst = 0.0;
      for (int s = 0; s < gc_seeds; ++s) {
        PolicyConfig pc;
        pc.layers = gc_layers;
        pc.width = gc_width;
        pc.seed = static_cast<std::uint64_t>(s) + 1;
        Policy policy(pc, Encoding::make(d.state_space, d.action_space, pc.action_dim, pc.seed));
        std::mt19937_64 rng(pc.seed);
        const auto windows = sample_windows(d.trajectories, 3, pc.K, RtgSource::kOriginal, rng);
        const Batch batch = policy.make_batch(windows);
        const double lambda = 0.5;
        GradCheckOptions opts;
        opts.coords_per_tensor = gc_coords;
        opts.seed = pc.seed;
        const GradCheckResult res = check_gradients(
            policy.params(),
            [&](Tape& t, ParameterSet& p) {
              PolicyOutput out = policy.forward(t, batch, p);
              return sub(gaussian_nll_loss(out, batch), scale(gaussian_entropy_loss(out, batch), lambda));
            },
            opts);
        worst = std::max(worst, res.max_rel_error);
        std::cout << "seed " << s << ": max rel error " << res.max_rel_error << " ("
                  << res.worst_parameter << ", " << res.checked << " coords)\n";
      }
      std::cout << (worst < 1e-4 ? "PASS" : "FAIL") << " worst " << worst << '\n';
      return worst < 1e-4 ? 0 : 1;
    } else if (run->parsed()) {
      const ExperimentResult r = run_experiment(cfg, out_dir);
      std::cout << eval_record(r.eval) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
