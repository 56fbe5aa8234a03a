#include "edt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "edt/gaussian.hpp"
#include "edt/trainer.hpp"

namespace edt {

int EvalReport::visits(ItemId item) const {
  return static_cast<int>(std::count_if(traces.begin(), traces.end(), [&](const EpisodeTrace& t) {
    return std::find(t.path.begin(), t.path.end(), item) != t.path.end();
  }));
}

void EvalReport::write(const std::string& path, const ItemGraph& graph) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write eval report '" + path + "'");
  nlohmann::json summary{{"record", "summary"},          {"episodes", episodes},
                         {"mean_return", mean_return},   {"stdev_return", stdev_return},
                         {"stitch_rate", stitch_rate},   {"success_rate", success_rate},
                         {"success_threshold", success_threshold}};
  os << summary.dump() << '\n';
  for (std::size_t i = 0; i < traces.size(); ++i) {
    nlohmann::json rec{{"record", "episode"},
                       {"episode", i},
                       {"path", graph.path_to_string(traces[i].path)},
                       {"return", traces[i].ret},
                       {"stitched", traces[i].stitched}};
    os << rec.dump() << '\n';
  }
}

EpisodeRunner scripted_runner(const ItemGraph& graph, LoggingPolicy policy, int step_cap) {
  return [&graph, policy = std::move(policy), step_cap](std::mt19937_64& rng) {
    EnvState s = reset(graph);
    while (!is_done(graph, s) && s.step < step_cap) s = step(graph, s, act(policy, graph, s, rng)).state;
    return s.history;
  };
}

EpisodeRunner policy_runner(const ItemGraph& graph, const Policy& policy, double g,
                            SampleMode mode, int step_cap) {
  return [&graph, &policy, g, mode, step_cap](std::mt19937_64& rng) {
    return rollout(graph, policy, g, mode, rng, step_cap).path;
  };
}

std::set<ItemPath> dataset_paths(const Dataset& dataset) {
  std::set<ItemPath> out;
  for (const auto& t : dataset.trajectories) out.insert(trajectory_path(t));
  return out;
}

EvalReport evaluate(const ItemGraph& graph, const std::set<ItemPath>& offline_paths,
                    const EpisodeRunner& runner, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  std::mt19937_64 rng(seed);
  EvalReport rep;
  rep.episodes = episodes;
  int stitched = 0, success = 0;
  for (int e = 0; e < episodes; ++e) {
    EpisodeTrace tr;
    tr.path = runner(rng);
    tr.ret = graph.path_return(tr.path);
    tr.stitched = tr.ret > 0.0 && offline_paths.count(tr.path) == 0;
    stitched += tr.stitched;
    success += tr.ret >= rep.success_threshold;
    rep.traces.push_back(std::move(tr));
  }
  double total = 0.0;
  for (const auto& t : rep.traces) total += t.ret;
  rep.mean_return = total / episodes;
  double ss = 0.0;
  for (const auto& t : rep.traces) ss += (t.ret - rep.mean_return) * (t.ret - rep.mean_return);
  rep.stdev_return = std::sqrt(ss / episodes);
  rep.stitch_rate = static_cast<double>(stitched) / episodes;
  rep.success_rate = static_cast<double>(success) / episodes;
  return rep;
}

EvalReport evaluate_policy(const ItemGraph& graph, const Policy& policy, const Dataset& offline,
                           int episodes, double g, SampleMode mode, std::uint64_t seed) {
  return evaluate(graph, dataset_paths(offline), policy_runner(graph, policy, g, mode), episodes,
                  seed);
}

RankMetrics ranking_metrics(std::span<const int> ranked, const std::set<int>& relevant, int k) {
  if (k < 1) throw ConfigError("ranking_metrics: k must be >= 1");
  if (relevant.empty()) throw Error("ranking_metrics: empty relevant set");
  double hits = 0.0, dcg = 0.0, idcg = 0.0;
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked[i])) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
  }
  const std::size_t ideal = std::min(relevant.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  RankMetrics m;
  m.recall = hits / static_cast<double>(relevant.size());
  m.precision = hits / k;
  m.ndcg = dcg / idcg;
  return m;
}

RankMetrics rank_metrics(const Policy& policy, const Dataset& heldout, int k) {
  const Encoding& enc = policy.encoding();
  if (!enc.action_space.discrete()) throw ConfigError("rank_metrics: needs discrete items");
  const int n = static_cast<int>(enc.action_space.size);
  RankMetrics acc;
  acc.states = 0;
  std::vector<int> items(static_cast<std::size_t>(n));
  std::iota(items.begin(), items.end(), 1);
  for (const auto& traj : heldout.trajectories) {
    for (Index t = 0; t < traj.length(); ++t) {
      if (!(traj.rewards(t) > 0.0)) continue;
      const int clicked = static_cast<int>(std::lround(traj.actions(t, 0)));
      if (clicked < 1 || clicked > n) {
        throw ShapeError("rank_metrics: held-out item " + std::to_string(clicked) +
                         " is outside the embedding table");
      }
      const ActionDistribution d = policy.predict(window_at(traj, t, policy.config().K));
      std::vector<double> score(static_cast<std::size_t>(n + 1));
      for (int i = 1; i <= n; ++i) {
        score[i] = gaussian_log_density(d.mean, d.logvar, enc.action_embedding.row(i));
      }
      std::vector<int> ranked = items;
      std::stable_sort(ranked.begin(), ranked.end(),
                       [&](int a, int b) { return score[a] > score[b]; });
      const RankMetrics m = ranking_metrics(ranked, {clicked}, k);
      acc.recall += m.recall;
      acc.precision += m.precision;
      acc.ndcg += m.ndcg;
      ++acc.states;
    }
  }
  if (acc.states == 0) throw Error("rank_metrics: held-out set has no clicked interactions");
  acc.recall /= acc.states;
  acc.precision /= acc.states;
  acc.ndcg /= acc.states;
  return acc;
}

}  // namespace edt
