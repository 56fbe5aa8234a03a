#include "edt/envsim.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace edt {

namespace {

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace

ItemId ItemGraph::intern(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  names_.push_back(name);
  const ItemId id = static_cast<ItemId>(names_.size());
  ids_.emplace(name, id);
  succ_.resize(names_.size() + 1);
  return id;
}

ItemGraph ItemGraph::parse(std::istream& is) {
  ItemGraph g;
  g.succ_.resize(1);
  std::vector<std::vector<std::string>> pending_paths;
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::istringstream ls(strip_comment(raw));
    std::string kw;
    if (!(ls >> kw)) continue;
    std::vector<std::string> args;
    for (std::string a; ls >> a;) args.push_back(a);
    auto fail = [&](const std::string& msg) {
      throw ConfigError("graph line " + std::to_string(lineno) + ": " + msg);
    };
    if (kw == "node") {
      for (const auto& a : args) g.intern(a);
    } else if (kw == "edge") {
      if (args.size() < 2) fail("edge needs a source and at least one target");
      const ItemId from = g.intern(args[0]);
      for (std::size_t k = 1; k < args.size(); ++k) {
        const ItemId to = g.intern(args[k]);
        auto& s = g.succ_[from];
        if (std::find(s.begin(), s.end(), to) == s.end()) s.push_back(to);
      }
    } else if (kw == "terminal") {
      if (args.size() != 2) fail("terminal needs <name> <reward>");
      double r = 0.0;
      try {
        std::size_t used = 0;
        r = std::stod(args[1], &used);
        if (used != args[1].size()) fail("bad reward '" + args[1] + "'");
      } catch (const std::logic_error&) {
        fail("bad reward '" + args[1] + "'");
      }
      g.terminal_[g.intern(args[0])] = r;
    } else if (kw == "start") {
      if (args.size() != 1) fail("start needs exactly one item");
      g.start_ = g.intern(args[0]);
    } else if (kw == "path") {
      if (args.empty()) fail("path needs at least one item");
      pending_paths.push_back(args);
    } else {
      fail("unknown keyword '" + kw + "'");
    }
  }
  for (const auto& p : pending_paths) g.paths_.push_back(g.path_from_names(p));
  g.validate();
  return g;
}

ItemGraph ItemGraph::parse(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

ItemGraph ItemGraph::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open graph file '" + path + "'");
  return parse(is);
}

std::string ItemGraph::to_text() const {
  std::ostringstream os;
  os << "node";
  for (const auto& n : names_) os << ' ' << n;
  os << "\nstart " << name(start_) << '\n';
  for (ItemId i = 1; i <= num_items(); ++i) {
    if (succ_[i].empty()) continue;
    os << "edge " << name(i);
    for (ItemId j : succ_[i]) os << ' ' << name(j);
    os << '\n';
  }
  for (const auto& [id, r] : terminal_) os << "terminal " << name(id) << ' ' << r << '\n';
  for (const auto& p : paths_) {
    os << "path";
    for (ItemId i : p) os << ' ' << name(i);
    os << '\n';
  }
  return os.str();
}

ItemId ItemGraph::id(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw ConfigError("unknown item '" + name + "'");
  return it->second;
}

const std::string& ItemGraph::name(ItemId id) const {
  if (!contains(id)) throw ConfigError("unknown item id " + std::to_string(id));
  return names_[static_cast<std::size_t>(id - 1)];
}

const std::vector<ItemId>& ItemGraph::successors(ItemId id) const {
  if (!contains(id)) throw ConfigError("unknown item id " + std::to_string(id));
  return succ_[static_cast<std::size_t>(id)];
}

bool ItemGraph::is_terminal(ItemId id) const { return terminal_.count(id) != 0; }

double ItemGraph::terminal_reward(ItemId id) const {
  auto it = terminal_.find(id);
  return it == terminal_.end() ? 0.0 : it->second;
}

ItemPath ItemGraph::path_from_names(const std::vector<std::string>& names) const {
  ItemPath p;
  for (const auto& n : names) p.push_back(id(n));
  return p;
}

std::string ItemGraph::path_to_string(const ItemPath& path) const {
  std::string s = "(";
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (k) s += ",";
    s += contains(path[k]) ? name(path[k]) : "?";
  }
  return s + ")";
}

std::vector<ItemPath> ItemGraph::enumerate_paths() const {
  std::vector<ItemPath> out;
  ItemPath cur{start_};
  std::function<void()> dfs = [&] {
    const ItemId at = cur.back();
    if (is_terminal(at)) {
      out.push_back(cur);
      return;
    }
    for (ItemId next : successors(at)) {
      cur.push_back(next);
      dfs();
      cur.pop_back();
    }
  };
  dfs();
  return out;
}

double ItemGraph::path_return(const ItemPath& path) const {
  return path.empty() ? 0.0 : terminal_reward(path.back());
}

void ItemGraph::validate() const {
  if (names_.empty()) throw ConfigError("graph has no items");
  if (!contains(start_)) throw ConfigError("graph has no start item");
  for (ItemId i = 1; i <= num_items(); ++i) {
    const bool terminal = is_terminal(i);
    if (terminal && !succ_[i].empty()) {
      throw ConfigError("terminal item '" + name(i) + "' has successors");
    }
    if (!terminal && succ_[i].empty()) {
      throw ConfigError("non-terminal item '" + name(i) + "' has no successors");
    }
  }
  // Acyclicity by colouring DFS over everything reachable or not.
  std::vector<int> colour(static_cast<std::size_t>(num_items() + 1), 0);
  std::function<void(ItemId)> visit = [&](ItemId u) {
    colour[u] = 1;
    for (ItemId v : succ_[u]) {
      if (colour[v] == 1) {
        throw ConfigError("graph has a cycle through '" + name(v) + "'");
      }
      if (colour[v] == 0) visit(v);
    }
    colour[u] = 2;
  };
  for (ItemId i = 1; i <= num_items(); ++i)
    if (colour[i] == 0) visit(i);

  bool positive = false;
  for (const auto& p : enumerate_paths()) positive = positive || path_return(p) > 0.0;
  if (!positive) throw ConfigError("no positive-reward terminal is reachable from the start");

  for (const auto& p : paths_) {
    if (p.empty() || p.front() != start_) {
      throw ConfigError("logging path " + path_to_string(p) + " does not begin at the start");
    }
    for (std::size_t k = 1; k < p.size(); ++k) {
      const auto& s = succ_[p[k - 1]];
      if (std::find(s.begin(), s.end(), p[k]) == s.end()) {
        throw ConfigError("logging path " + path_to_string(p) + " uses a missing edge");
      }
    }
  }
}

std::string default_stitch_graph_text() {
  return "# Stitching scenario: the logged data never contains i4 -> i7.\n"
         "node i1 i2 i3 i4 i5 i6 i7 i8\n"
         "start i1\n"
         "edge i1 i2\n"
         "edge i2 i3 i6\n"
         "edge i3 i4 i5\n"
         "edge i4 i7 i8\n"
         "edge i6 i7\n"
         "terminal i5 0\n"
         "terminal i7 1\n"
         "terminal i8 0\n"
         "path i1 i2 i3 i4 i8\n"
         "path i1 i2 i6 i7\n"
         "path i1 i2 i3 i5\n";
}

ItemGraph default_stitch_graph() { return ItemGraph::parse(default_stitch_graph_text()); }

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

EnvState reset(const ItemGraph& graph) {
  EnvState s;
  s.current = graph.start();
  s.history = {graph.start()};
  return s;
}

bool is_done(const ItemGraph& graph, const EnvState& state) {
  return graph.is_terminal(state.current);
}

StepResult step(const ItemGraph& graph, const EnvState& state, ItemId action) {
  if (graph.is_terminal(state.current)) {
    throw InvalidAction("episode already ended at '" + graph.name(state.current) + "'");
  }
  const auto& succ = graph.successors(state.current);
  if (std::find(succ.begin(), succ.end(), action) == succ.end()) {
    throw InvalidAction("item " + std::to_string(action) + " is not a successor of '" +
                        graph.name(state.current) + "'");
  }
  StepResult r;
  r.state = state;
  r.state.current = action;
  r.state.step += 1;
  r.state.history.push_back(action);
  r.done = graph.is_terminal(action);
  r.reward = r.done ? graph.terminal_reward(action) : 0.0;
  return r;
}

RowVector state_row(const EnvState& state) {
  RowVector row(kStateColumns);
  row << state.current, state.previous();
  return row;
}

ItemId act(const LoggingPolicy& policy, const ItemGraph& graph, const EnvState& state,
           std::mt19937_64& rng) {
  const auto& succ = graph.successors(state.current);
  if (succ.empty()) throw InvalidAction("no legal action at '" + graph.name(state.current) + "'");
  auto uniform = [&] {
    std::uniform_int_distribution<std::size_t> pick(0, succ.size() - 1);
    return succ[pick(rng)];
  };
  auto scripted = [&](const ItemPath& path) -> ItemId {
    const auto k = static_cast<std::size_t>(state.step);
    const bool on_path = k + 1 < path.size() && path[k] == state.current;
    return on_path ? path[k + 1] : kNoItem;
  };
  return std::visit(
      [&](const auto& p) -> ItemId {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ScriptedPolicy>) {
          const ItemId next = scripted(p.path);
          return next != kNoItem ? next : uniform();
        } else {
          std::uniform_real_distribution<double> coin(0.0, 1.0);
          const bool explore = coin(rng) < p.epsilon;
          const ItemId next = scripted(p.path);
          return (explore || next == kNoItem) ? uniform() : next;
        }
      },
      policy);
}

std::vector<LoggingPolicy> default_logging_policies(const ItemGraph& graph) {
  std::vector<LoggingPolicy> out;
  for (const auto& p : graph.logging_paths()) out.push_back(ScriptedPolicy{p});
  if (out.empty()) out.push_back(EpsilonRandomPolicy{1.0, {}});
  return out;
}

Trajectory episode_trajectory(const ItemGraph& graph, const ItemPath& path) {
  if (path.size() < 2) throw Error("episode path needs at least one step");
  EnvState s = reset(graph);
  if (path.front() != s.current) throw InvalidAction("path does not begin at the start item");
  const Index T = static_cast<Index>(path.size()) - 1;
  Matrix states(T, kStateColumns);
  Matrix actions(T, 1);
  Vector rewards(T);
  for (Index t = 0; t < T; ++t) {
    states.row(t) = state_row(s);
    const ItemId a = path[static_cast<std::size_t>(t + 1)];
    StepResult r = step(graph, s, a);
    actions(t, 0) = a;
    rewards(t) = r.reward;
    s = std::move(r.state);
  }
  return Trajectory::from_rewards(std::move(states), std::move(actions), std::move(rewards));
}

ItemPath trajectory_path(const Trajectory& traj) {
  ItemPath p;
  if (traj.length() == 0) return p;
  p.push_back(static_cast<ItemId>(traj.states(0, 0)));
  for (Index t = 0; t < traj.length(); ++t) p.push_back(static_cast<ItemId>(traj.actions(t, 0)));
  return p;
}

SpaceDescriptor graph_state_space(const ItemGraph& graph) {
  return {SpaceDescriptor::Kind::kDiscrete, graph.num_items(), kStateColumns};
}

SpaceDescriptor graph_action_space(const ItemGraph& graph) {
  return {SpaceDescriptor::Kind::kDiscrete, graph.num_items(), 1};
}

Dataset generate_offline_dataset(const ItemGraph& graph,
                                 const std::vector<LoggingPolicy>& policies, int n,
                                 std::uint64_t seed, int step_cap) {
  if (n < 1) throw Error("generate_offline_dataset: n must be >= 1, got " + std::to_string(n));
  if (policies.empty()) throw Error("generate_offline_dataset: no logging policies");
  std::mt19937_64 rng(seed);
  Dataset d;
  d.state_space = graph_state_space(graph);
  d.action_space = graph_action_space(graph);
  d.provenance = "item graph, " + std::to_string(policies.size()) + " logging policies, seed " +
                 std::to_string(seed);
  for (int i = 0; i < n; ++i) {
    const LoggingPolicy& policy = policies[static_cast<std::size_t>(i) % policies.size()];
    EnvState s = reset(graph);
    ItemPath path{s.current};
    while (!is_done(graph, s) && s.step < step_cap) {
      const ItemId a = act(policy, graph, s, rng);
      s = step(graph, s, a).state;
      path.push_back(a);
    }
    d.trajectories.push_back(episode_trajectory(graph, path));
  }
  return d;
}

}  // namespace edt
