#include "edt/relabel.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace edt {

Vector relabel_rtg(const Trajectory& traj, const ValueFunction& value) {
  Vector values(traj.length());
  for (Index t = 0; t < traj.length(); ++t) values(t) = value(traj.states.row(t));
  return relabel_rtg(traj.rewards, values);
}

RelabelEntry relabel_trajectory(Trajectory& traj, const ValueFunction& value) {
  const Index T = traj.length();
  Vector values(T);
  for (Index t = 0; t < T; ++t) values(t) = value(traj.states.row(t));
  Vector relabeled = relabel_rtg(traj.rewards, values);

  RelabelEntry entry;
  for (Index t = 0; t + 1 < T; ++t) {
    if (values(t + 1) > relabeled(t + 1)) ++entry.lifted_positions;
  }
  entry.max_uplift = std::max(0.0, (relabeled - traj.rtg).maxCoeff());
  entry.original = traj.rtg;
  entry.relabeled = relabeled;
  traj.rtg_relabel = std::move(relabeled);
  return entry;
}

RelabelReport relabel_dataset(Dataset& dataset, const ValueFunction& value) {
  RelabelReport report;
  report.entries.reserve(dataset.trajectories.size());
  for (auto& t : dataset.trajectories) report.entries.push_back(relabel_trajectory(t, value));
  return report;
}

int RelabelReport::total_lifted() const {
  int n = 0;
  for (const auto& e : entries) n += e.lifted_positions;
  return n;
}

double RelabelReport::max_uplift() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_uplift);
  return m;
}

void RelabelReport::write(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    nlohmann::json rec{{"trajectory", i},
                       {"lifted_positions", e.lifted_positions},
                       {"max_uplift", e.max_uplift},
                       {"original", std::vector<double>(e.original.begin(), e.original.end())},
                       {"relabeled",
                        std::vector<double>(e.relabeled.begin(), e.relabeled.end())}};
    os << rec.dump() << '\n';
  }
}

}  // namespace edt
