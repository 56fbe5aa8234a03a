#include "edt/trajectory.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "edt/relabel.hpp"

namespace edt {

using nlohmann::json;

Trajectory Trajectory::from_rewards(Matrix states, Matrix actions, Vector rewards) {
  Trajectory t;
  t.states = std::move(states);
  t.actions = std::move(actions);
  t.rtg = reward_to_go(rewards);
  t.rewards = std::move(rewards);
  t.validate();
  return t;
}

void Trajectory::validate() const {
  const Index n = rewards.size();
  if (n < 1) throw FormatError("trajectory is empty");
  if (states.rows() != n || actions.rows() != n || rtg.size() != n ||
      (rtg_relabel && rtg_relabel->size() != n)) {
    std::ostringstream os;
    os << "sequence lengths disagree: states " << states.rows() << ", actions "
       << actions.rows() << ", rewards " << n << ", rtg " << rtg.size();
    if (rtg_relabel) os << ", rtg_relabel " << rtg_relabel->size();
    throw FormatError(os.str());
  }
}

bool operator==(const Trajectory& a, const Trajectory& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
  };
  if (!same(a.states, b.states) || !same(a.actions, b.actions) ||
      !same(a.rewards, b.rewards) || !same(a.rtg, b.rtg)) {
    return false;
  }
  if (a.rtg_relabel.has_value() != b.rtg_relabel.has_value()) return false;
  return !a.rtg_relabel || same(*a.rtg_relabel, *b.rtg_relabel);
}

ContextWindow window_at(const Trajectory& traj, Index end, int K, RtgSource source) {
  if (K < 1) throw Error("context length must be >= 1, got " + std::to_string(K));
  const Index T = traj.length();
  if (end < 0 || end >= T) {
    throw Error("window end " + std::to_string(end) + " outside [0, " + std::to_string(T - 1) +
                "]");
  }
  ContextWindow w;
  w.end = end;
  w.rtg = Vector::Zero(K);
  w.states = Matrix::Zero(K, traj.states.cols());
  w.actions = Matrix::Zero(K, traj.actions.cols());
  w.rewards = Vector::Zero(K);
  w.timesteps = Eigen::VectorXi::Constant(K, kPadTimestep);
  w.mask = VectorX<bool>::Constant(K, false);

  const Index start = end - K + 1;
  const Index first = std::max<Index>(start, 0);
  for (Index t = first; t <= end; ++t) {
    const Index k = t - start;
    w.states.row(k) = traj.states.row(t);
    w.actions.row(k) = traj.actions.row(t);
    w.rewards(k) = traj.rewards(t);
    w.rtg(k) = traj.rtg(t);
    w.timesteps(k) = static_cast<int>(t);
    w.mask(k) = true;
  }

  if (source == RtgSource::kRelabeled && traj.rtg_relabel) {
    const Index real = end - first + 1;
    const Index offset = K - real;
    Vector regen = regenerate_window_rtg(traj.rewards.segment(first, real - 1),
                                         (*traj.rtg_relabel)(end));
    w.rtg.segment(offset, real) = regen;
  }
  return w;
}

ContextWindow sample_subsequence(const Trajectory& traj, int K, std::mt19937_64& rng,
                                 RtgSource source) {
  if (K < 1) throw Error("context length must be >= 1, got " + std::to_string(K));
  std::uniform_int_distribution<Index> pick(0, traj.length() - 1);
  return window_at(traj, pick(rng), K, source);
}

Vector trajectory_sampling_probs(const std::vector<Trajectory>& buffer) {
  if (buffer.empty()) throw Error("trajectory_sampling_probs: empty buffer");
  Vector p(static_cast<Index>(buffer.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (buffer[i].length() < 1) throw Error("trajectory_sampling_probs: empty trajectory");
    p(static_cast<Index>(i)) = static_cast<double>(buffer[i].length());
    total += p(static_cast<Index>(i));
  }
  return p / total;
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormatTag = "edt4rec-trajectories";

json space_to_json(const SpaceDescriptor& s) {
  return json{{"kind", s.discrete() ? "discrete" : "continuous"},
              {"size", s.size},
              {"columns", s.columns}};
}

SpaceDescriptor space_from_json(const json& j) {
  SpaceDescriptor s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "discrete") {
    s.kind = SpaceDescriptor::Kind::kDiscrete;
  } else if (kind == "continuous") {
    s.kind = SpaceDescriptor::Kind::kContinuous;
  } else {
    throw FormatError("unknown space kind '" + kind + "'");
  }
  s.size = j.at("size").get<Index>();
  s.columns = j.at("columns").get<Index>();
  return s;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Matrix matrix_from_json(const json& j, Index cols) {
  if (!j.is_array()) throw FormatError("expected an array of rows");
  Matrix m(static_cast<Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& row = j[i];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw FormatError("row " + std::to_string(i) + " has wrong width");
    }
    for (Index c = 0; c < cols; ++c) m(static_cast<Index>(i), c) = row[c].get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace

DatasetManifest Dataset::manifest() const {
  DatasetManifest m;
  m.count = trajectories.size();
  m.state_space = state_space;
  m.action_space = action_space;
  m.provenance = provenance;
  bool first = true;
  for (const auto& t : trajectories) {
    if (t.rewards.size() == 0) continue;
    const double lo = t.rewards.minCoeff(), hi = t.rewards.maxCoeff();
    m.reward_min = first ? lo : std::min(m.reward_min, lo);
    m.reward_max = first ? hi : std::max(m.reward_max, hi);
    first = false;
  }
  return m;
}

std::string manifest_path(const std::string& dataset_path) {
  return dataset_path + ".manifest.json";
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  json header{{"format", kFormatTag},
              {"version", kDatasetVersion},
              {"count", dataset.trajectories.size()},
              {"state_space", space_to_json(dataset.state_space)},
              {"action_space", space_to_json(dataset.action_space)}};
  os << header.dump() << '\n';
  for (const auto& t : dataset.trajectories) {
    json rec{{"states", matrix_to_json(t.states)},
             {"actions", matrix_to_json(t.actions)},
             {"rewards", vector_to_json(t.rewards)},
             {"rtg", vector_to_json(t.rtg)}};
    if (t.rtg_relabel) rec["rtg_relabel"] = vector_to_json(*t.rtg_relabel);
    os << rec.dump() << '\n';
  }

  const DatasetManifest m = dataset.manifest();
  std::ofstream ms(manifest_path(path));
  if (!ms) throw Error("cannot open '" + manifest_path(path) + "' for writing");
  json mj{{"count", m.count},
          {"state_space", space_to_json(m.state_space)},
          {"action_space", space_to_json(m.action_space)},
          {"reward_min", m.reward_min},
          {"reward_max", m.reward_max},
          {"provenance", m.provenance},
          {"version", kDatasetVersion}};
  ms << mj.dump(2) << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path + ": missing header record");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed header: " + e.what());
  }
  if (header.value("format", "") != kFormatTag) throw FormatError(path + ": not a dataset file");
  const int version = header.value("version", -1);
  if (version != kDatasetVersion) {
    throw FormatError(path + ": dataset version " + std::to_string(version) + ", expected " +
                      std::to_string(kDatasetVersion));
  }

  Dataset d;
  d.state_space = space_from_json(header.at("state_space"));
  d.action_space = space_from_json(header.at("action_space"));
  const std::size_t count = header.at("count").get<std::size_t>();
  std::size_t index = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      Trajectory t;
      t.states = matrix_from_json(rec.at("states"), d.state_space.columns);
      t.actions = matrix_from_json(rec.at("actions"), d.action_space.columns);
      t.rewards = vector_from_json(rec.at("rewards"));
      t.rtg = rec.contains("rtg") ? vector_from_json(rec.at("rtg")) : reward_to_go(t.rewards);
      if (rec.contains("rtg_relabel")) t.rtg_relabel = vector_from_json(rec.at("rtg_relabel"));
      t.validate();
      d.trajectories.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw FormatError(path + ": trajectory " + std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  if (d.trajectories.size() != count) {
    throw FormatError(path + ": header declares " + std::to_string(count) +
                      " trajectories, file holds " + std::to_string(d.trajectories.size()));
  }

  std::ifstream ms(manifest_path(path));
  if (ms) {
    json mj = json::parse(ms, nullptr, false);
    if (mj.is_discarded()) throw FormatError(manifest_path(path) + ": malformed manifest");
    if (mj.value("count", std::size_t{0}) != count) {
      throw FormatError(manifest_path(path) + ": manifest count does not match dataset");
    }
    d.provenance = mj.value("provenance", "");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Rating-log ingestion
// ---------------------------------------------------------------------------

std::vector<std::int64_t> ingested_item_ids(const std::vector<RatingEvent>& log) {
  std::vector<std::int64_t> items;
  items.reserve(log.size());
  for (const auto& e : log) items.push_back(e.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  items.insert(items.begin(), 0);  // dense id 0 is the pad
  return items;
}

Dataset ingest_ratings(const std::vector<RatingEvent>& log, const IngestOptions& opts) {
  if (!(opts.max_rating > 0.0)) throw Error("max_rating must be positive");
  if (opts.window < 1) throw Error("state window must be >= 1");
  for (const auto& e : log) {
    if (!(e.rating >= 0.0 && e.rating <= opts.max_rating)) {
      throw Error("rating " + std::to_string(e.rating) + " outside [0, " +
                  std::to_string(opts.max_rating) + "] for user " + std::to_string(e.user));
    }
  }
  const std::vector<std::int64_t> items = ingested_item_ids(log);
  auto dense = [&](std::int64_t raw) {
    return static_cast<double>(std::lower_bound(items.begin() + 1, items.end(), raw) -
                               items.begin());
  };

  std::map<std::int64_t, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < log.size(); ++i) by_user[log[i].user].push_back(i);

  Dataset d;
  d.state_space = {SpaceDescriptor::Kind::kDiscrete, static_cast<Index>(items.size() - 1),
                   opts.window};
  d.action_space = {SpaceDescriptor::Kind::kDiscrete, static_cast<Index>(items.size() - 1), 1};
  d.provenance = "rating log, click = rating > " + std::to_string(opts.positive_fraction) +
                 " * " + std::to_string(opts.max_rating);

  const double threshold = opts.positive_fraction * opts.max_rating;
  for (auto& [user, idx] : by_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return log[a].timestamp < log[b].timestamp;
    });
    const Index T = static_cast<Index>(idx.size());
    Matrix states = Matrix::Zero(T, opts.window);
    Matrix actions(T, 1);
    Vector rewards(T);
    std::vector<double> clicked;  // most recent last
    for (Index t = 0; t < T; ++t) {
      const RatingEvent& e = log[idx[static_cast<std::size_t>(t)]];
      for (int w = 0; w < opts.window && w < static_cast<int>(clicked.size()); ++w) {
        states(t, w) = clicked[clicked.size() - 1 - static_cast<std::size_t>(w)];
      }
      actions(t, 0) = dense(e.item);
      rewards(t) = e.rating > threshold ? 1.0 : 0.0;
      if (rewards(t) > 0.0) clicked.push_back(actions(t, 0));
    }
    d.trajectories.push_back(Trajectory::from_rewards(std::move(states), std::move(actions),
                                                      std::move(rewards)));
  }
  return d;
}

std::vector<RatingEvent> read_rating_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open rating log '" + path + "'");
  std::vector<RatingEvent> log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    RatingEvent e;
    if (!(ls >> e.user >> e.item >> e.rating >> e.timestamp)) {
      if (lineno == 1) continue;  // header row
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected user,item,rating,timestamp");
    }
    log.push_back(e);
  }
  return log;
}

}  // namespace edt
