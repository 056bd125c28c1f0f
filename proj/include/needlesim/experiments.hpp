#pragma once

// Simulated 12-core biopsy study: targets, feasible paths, both tasks, both
// controllers and the manipulation-effort metric.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "needlesim/controllers.hpp"
#include "needlesim/errors.hpp"
#include "needlesim/insertion.hpp"

namespace needlesim {

struct Target {
  int number = 0;
  double depth = 0.0;       // [mm]
  double deflection = 0.0;  // goal y [mm]
  double slope = 0.0;       // goal k_tip in percent

  Outputs pose() const { return {depth, deflection, slope / 100.0}; }
  friend bool operator==(const Target&, const Target&) = default;
};

/// The twelve targets in ascending depth order.
inline std::vector<Target> builtin_targets() {
  return {
      {1, 30.62, -1.00, -2.00},  {2, 33.02, -1.21, -2.00},  {3, 35.42, -1.38, -3.00},
      {4, 40.22, -1.80, -3.00},  {12, 40.22, -1.80, -3.00}, {11, 45.02, -2.23, -4.00},
      {5, 54.62, -3.08, -5.00},  {6, 54.62, -3.08, -5.00},  {10, 61.82, -3.78, -6.00},
      {7, 64.22, -4.07, -6.00},  {8, 66.62, -4.28, -6.00},  {9, 69.02, -4.55, -6.00},
  };
}

inline Target find_target(int number) {
  for (const auto& t : builtin_targets())
    if (t.number == number) return t;
  throw PreconditionError("unknown target number " + std::to_string(number));
}

/// Advances the base straight in, one insertion step at a time, until the tip
/// reaches `depth`. Calls `on_step` after every step.
template <class Fn>
void insert_straight(SimState& sim, double depth, Fn&& on_step) {
  const double step = sim.config().insertion_step;
  while (sim.tip_station() < depth - 1e-9) {
    sim.apply_inputs(Vec3(std::min(step, depth - sim.tip_station()), 0.0, 0.0));
    on_step(sim);
  }
}

inline void insert_straight(SimState& sim, double depth) {
  insert_straight(sim, depth, [](const SimState&) {});
}

class PathGenerationError : public Error {
 public:
  using Error::Error;
};

struct PathSpec {
  double open_loop_deflection = 0.0;  // straight insertion from a zero offset
  double entry_offset = 0.0;
  std::vector<Outputs> waypoints;
};

/// Feasible tip path to `target` under the nominal parameters: straight
/// insertion from an entry offset chosen so that the open-loop deflection
/// carries the tip onto the target.
inline PathSpec generate_path(const Target& target, const SimConfig& config,
                              double tolerance = 0.5) {
  PathSpec path;
  SimState probe = new_simulation(config, 0.0);
  insert_straight(probe, target.depth);
  path.open_loop_deflection = probe.observe().y_tip;
  path.entry_offset = target.deflection - path.open_loop_deflection;

  SimState sim = new_simulation(config, path.entry_offset);
  path.waypoints.push_back(sim.observe());
  insert_straight(sim, target.depth, [&](const SimState& s) { path.waypoints.push_back(s.observe()); });
  const double miss = std::abs(path.waypoints.back().y_tip - target.deflection);
  if (miss > tolerance)
    throw PathGenerationError("path to target " + std::to_string(target.number) + " misses by " +
                              std::to_string(miss) + " mm");
  return path;
}

struct Metrics {
  double p_base = 0.0;      // [%]
  double p_template = 0.0;  // [%]
  double final_err = 0.0;   // [mm]
  int steps = 0;
};

/// P = 100 max_t |y(t) - y(0)| / x_target for the base and the template.
inline Metrics compute_metrics(const RunRecord& record, const Target& target) {
  if (record.log.empty()) throw PreconditionError("cannot compute metrics of an empty record");
  const Inputs& first = record.log.front().inputs;
  double base = 0.0, tmpl = 0.0;
  for (const auto& row : record.log) {
    base = std::max(base, std::abs(row.inputs.y_base - first.y_base));
    tmpl = std::max(tmpl, std::abs(row.inputs.y_template - first.y_template));
  }
  return {100.0 * base / target.depth, 100.0 * tmpl / target.depth, record.final_err(),
          record.steps};
}

inline const char* to_string(TaskKind t) {
  return t == TaskKind::PathFollowing ? "path" : "point";
}

inline const char* to_string(StrategyKind s) {
  return s == StrategyKind::DataDriven ? "data" : "mech";
}

struct StudyCell {
  Target target;
  TaskKind task = TaskKind::PathFollowing;
  Strategy strategy;

  /// Stable identifier, e.g. "T09_path_mech_1.5".
  std::string id() const {
    char buf[64];
    if (strategy.kind == StrategyKind::DataDriven)
      std::snprintf(buf, sizeof buf, "T%02d_%s_data", target.number, to_string(task));
    else
      std::snprintf(buf, sizeof buf, "T%02d_%s_mech_%g", target.number, to_string(task),
                    strategy.model_scale);
    return buf;
  }
};

struct CellResult {
  StudyCell cell;
  RunRecord record;
  Metrics metrics;
  std::string error;  // set when the cell could not be run at all
};

inline Task make_task(TaskKind kind, const Target& target, const PathSpec& path) {
  Task task;
  task.kind = kind;
  task.goal = target.pose();
  if (kind == TaskKind::PathFollowing) task.waypoints = path.waypoints;
  return task;
}

/// Runs one cell on a fresh nominal plant starting at the path's entry pose.
inline CellResult run_cell(const StudyCell& cell, const PathSpec& path, const SimConfig& sim_config,
                           const ControllerConfig& ctrl_config) {
  CellResult out{cell, {}, {}, {}};
  SimState plant = new_simulation(sim_config, path.entry_offset);
  out.record = run_control_loop(plant, cell.strategy, make_task(cell.task, cell.target, path), ctrl_config);
  out.metrics = compute_metrics(out.record, cell.target);
  return out;
}

struct StudyMatrix {
  std::vector<Target> targets = builtin_targets();
  std::vector<TaskKind> tasks{TaskKind::PathFollowing, TaskKind::PointStabilization};
  std::vector<Strategy> strategies{Strategy::data_driven(), Strategy::mechanics(1.5),
                                   Strategy::mechanics(0.5)};

  std::vector<StudyCell> cells() const {
    std::vector<StudyCell> out;
    for (const auto& t : targets)
      for (auto task : tasks)
        for (const auto& s : strategies) out.push_back({t, task, s});
    return out;
  }
};

}  // namespace needlesim
