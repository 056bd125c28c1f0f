#pragma once

// Study sweep, CSV export and the study-level checks.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "needlesim/controllers.hpp"
#include "needlesim/experiments.hpp"
#include "needlesim/insertion.hpp"
#include "needlesim/text.hpp"

namespace needlesim {

inline constexpr const char* kWorkersEnv = "NEEDLESIM_WORKERS";

/// Worker count from NEEDLESIM_WORKERS, else the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv(kWorkersEnv); env && *env) {
    long n = 0;
    try {
      n = parse_integer(env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer");
    }
    if (n < 1) throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer");
    return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// thrown by any call is rethrown after all threads finish.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(n, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct StudyResult {
  std::map<int, PathSpec> paths;         // by target number
  std::map<int, std::string> path_errors;
  std::vector<CellResult> cells;          // in matrix order
};

inline StudyResult run_study(const StudyMatrix& matrix, const SimConfig& sim_config,
                             const ControllerConfig& ctrl_config, unsigned workers) {
  StudyResult out;
  std::vector<Target> targets;
  for (const auto& t : matrix.targets)
    if (std::none_of(targets.begin(), targets.end(), [&](const Target& u) { return u.number == t.number; }))
      targets.push_back(t);

  std::vector<PathSpec> paths(targets.size());
  std::vector<std::string> path_errors(targets.size());
  parallel_for(targets.size(), workers, [&](std::size_t i) {
    try {
      paths[i] = generate_path(targets[i], sim_config);
    } catch (const std::exception& e) {
      path_errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (path_errors[i].empty())
      out.paths.emplace(targets[i].number, std::move(paths[i]));
    else
      out.path_errors.emplace(targets[i].number, path_errors[i]);
  }

  const auto cells = matrix.cells();
  out.cells.resize(cells.size());
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    CellResult& r = out.cells[i];
    r.cell = cells[i];
    const auto path = out.paths.find(cells[i].target.number);
    if (path == out.paths.end()) {
      r.error = "path generation failed: " + out.path_errors.at(cells[i].target.number);
      return;
    }
    try {
      r = run_cell(cells[i], path->second, sim_config, ctrl_config);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  });
  return out;
}

inline bool succeeded(const CellResult& r, double tolerance) {
  return r.error.empty() && !r.record.log.empty() && r.record.status == RunStatus::Converged &&
         r.metrics.final_err <= tolerance;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kTrajectoryHeader =
    "step,x_base,y_base,y_template,x_tip,y_tip,k_tip,n_contacts,newton_iters";
inline constexpr const char* kRunHeader =
    "step,x_base,y_base,y_template,x_tip,y_tip,k_tip,n_contacts,newton_iters,"
    "x_desired,y_desired,k_desired,err,condition,flags";
inline constexpr const char* kSummaryHeader =
    "target,task,strategy,scale,P_base,P_template,err,steps,status";

inline void write_trajectory_row(std::ostream& out, int step, const Inputs& x, const Outputs& y,
                                 std::size_t contacts, int newton) {
  out << step << ',' << format_number(x.x_base) << ',' << format_number(x.y_base) << ','
      << format_number(x.y_template) << ',' << format_number(y.x_tip) << ','
      << format_number(y.y_tip) << ',' << format_number(y.k_tip) << ',' << contacts << ','
      << newton;
}

/// One row per insertion step of an open-loop run (header only if none).
inline void write_simulation_csv(std::ostream& out, std::span<const StepLog> rows) {
  out << kTrajectoryHeader << '\n';
  for (const auto& r : rows) {
    write_trajectory_row(out, r.step, r.inputs, r.outputs, r.contacts, r.newton_iterations);
    out << '\n';
  }
}

/// Full control-run log, probe moves included (flag bit 1).
inline void write_run_csv(std::ostream& out, const RunRecord& record) {
  out << kRunHeader << '\n';
  for (const auto& r : record.log) {
    write_trajectory_row(out, r.step, r.inputs, r.outputs, r.contacts, r.newton_iterations);
    out << ',' << format_number(r.desired.x_tip) << ',' << format_number(r.desired.y_tip) << ','
        << format_number(r.desired.k_tip) << ',' << format_number(r.err) << ','
        << format_number(r.condition) << ',' << r.flags << '\n';
  }
}

inline std::string status_text(const CellResult& r) {
  return r.error.empty() ? to_string(r.record.status) : "error";
}

inline void write_summary_csv(std::ostream& out, std::span<const CellResult> cells) {
  out << kSummaryHeader << '\n';
  for (const auto& r : cells) {
    const auto& c = r.cell;
    out << c.target.number << ',' << to_string(c.task) << ',' << to_string(c.strategy.kind) << ','
        << (c.strategy.kind == StrategyKind::MechanicsBased ? format_number(c.strategy.model_scale) : "")
        << ',' << format_number(r.metrics.p_base) << ',' << format_number(r.metrics.p_template) << ','
        << format_number(r.metrics.final_err) << ',' << r.metrics.steps << ',' << status_text(r) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Study-level checks

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw PreconditionError("need two equal-length samples");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) ma += ra[i], mb += rb[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

enum class CheckLevel { Pass, Warn, Fail };

struct CheckResult {
  std::string name;
  CheckLevel level = CheckLevel::Fail;
  std::string detail;

  bool passed() const { return level != CheckLevel::Fail; }
};

inline const char* to_string(CheckLevel l) {
  switch (l) {
    case CheckLevel::Pass: return "PASS";
    case CheckLevel::Warn: return "WARN";
    case CheckLevel::Fail: return "FAIL";
  }
  return "?";
}

struct StudyChecks {
  double stop_tolerance = 0.25;
  double effort_bound = 5.0;   // [%]
  double effort_hard = 8.0;    // [%]
  double min_rank_correlation = 0.5;
};

namespace detail {

inline std::string strategy_label(const Strategy& s) {
  return s.kind == StrategyKind::DataDriven ? "data" : "mech_" + format_number(s.model_scale);
}

inline const CellResult* find_cell(std::span<const CellResult> cells, int target, TaskKind task,
                                   const Strategy& s) {
  for (const auto& r : cells)
    if (r.cell.target.number == target && r.cell.task == task && r.cell.strategy == s) return &r;
  return nullptr;
}

}  // namespace detail

/// Targeting success: every cell ends within the stop tolerance.
inline CheckResult check_targeting(std::span<const CellResult> cells, const StudyChecks& c = {}) {
  CheckResult out{"targeting success", CheckLevel::Pass, {}};
  int ok = 0;
  std::string failed;
  for (const auto& r : cells) {
    if (succeeded(r, c.stop_tolerance))
      ++ok;
    else
      failed += (failed.empty() ? "" : " ") + r.cell.id();
  }
  out.detail = std::to_string(ok) + "/" + std::to_string(cells.size()) + " cells with err <= " +
               format_number(c.stop_tolerance) + " mm";
  if (!failed.empty()) {
    out.level = CheckLevel::Fail;
    out.detail += "; failed: " + failed;
  }
  return out;
}

/// Path-following effort stays below the bound (warning up to the hard limit).
inline CheckResult check_path_effort(std::span<const CellResult> cells, const StudyChecks& c = {}) {
  CheckResult out{"path-following effort bound", CheckLevel::Pass, {}};
  double worst = 0.0;
  std::string worst_id;
  bool missing = false;
  for (const auto& r : cells) {
    if (r.cell.task != TaskKind::PathFollowing) continue;
    if (!r.error.empty() || r.record.log.empty()) {
      missing = true;
      continue;
    }
    const double p = std::max(r.metrics.p_base, r.metrics.p_template);
    if (p > worst) worst = p, worst_id = r.cell.id();
  }
  out.detail = "max P = " + format_number(std::round(worst * 1e4) / 1e4) + "% (" + worst_id + ")";
  if (missing || worst >= c.effort_hard)
    out.level = CheckLevel::Fail;
  else if (worst >= c.effort_bound)
    out.level = CheckLevel::Warn;
  if (missing) out.detail += "; some path-following cells did not run";
  return out;
}

/// Point-stabilization template effort exceeds path-following's for each target and strategy.
inline CheckResult check_task_ordering(std::span<const CellResult> cells, const StudyMatrix& m) {
  CheckResult out{"task-effort ordering", CheckLevel::Pass, {}};
  int pairs = 0;
  std::string failed;
  for (const auto& t : m.targets)
    for (const auto& s : m.strategies) {
      const auto* path = detail::find_cell(cells, t.number, TaskKind::PathFollowing, s);
      const auto* point = detail::find_cell(cells, t.number, TaskKind::PointStabilization, s);
      if (!path || !point) continue;
      ++pairs;
      if (!(point->metrics.p_template > path->metrics.p_template))
        failed += (failed.empty() ? "T" : " T") + std::to_string(t.number) + "/" + detail::strategy_label(s);
    }
  out.detail = std::to_string(pairs) + " pairs";
  if (pairs == 0 || !failed.empty()) out.level = CheckLevel::Fail;
  if (!failed.empty()) out.detail += "; violated: " + failed;
  return out;
}

/// Point-stabilization base effort grows with target depth, per strategy.
inline CheckResult check_depth_trend(std::span<const CellResult> cells, const StudyMatrix& m,
                                     const StudyChecks& c = {}) {
  CheckResult out{"depth trend", CheckLevel::Pass, {}};
  bool any = false;
  for (const auto& s : m.strategies) {
    std::vector<double> depth, effort;
    for (const auto& t : m.targets)
      if (const auto* r = detail::find_cell(cells, t.number, TaskKind::PointStabilization, s)) {
        depth.push_back(t.depth);
        effort.push_back(r->metrics.p_base);
      }
    if (depth.size() < 2) continue;
    any = true;
    const double rho = spearman(depth, effort);
    out.detail += (out.detail.empty() ? "" : ", ") + detail::strategy_label(s) + " rho=" +
                  format_number(std::round(rho * 1e4) / 1e4);
    if (!(rho > c.min_rank_correlation)) out.level = CheckLevel::Fail;
  }
  if (!any) out.level = CheckLevel::Fail;
  return out;
}

/// Path-following template effort is larger for the stiffer internal model.
inline CheckResult check_stiffness_perception(std::span<const CellResult> cells, const StudyMatrix& m,
                                              double stiff = 1.5, double soft = 0.5) {
  CheckResult out{"stiffness-perception ordering", CheckLevel::Pass, {}};
  int ok = 0, total = 0;
  std::string failed;
  for (const auto& t : m.targets) {
    const auto* hi = detail::find_cell(cells, t.number, TaskKind::PathFollowing, Strategy::mechanics(stiff));
    const auto* lo = detail::find_cell(cells, t.number, TaskKind::PathFollowing, Strategy::mechanics(soft));
    if (!hi || !lo) continue;
    ++total;
    if (hi->metrics.p_template > lo->metrics.p_template)
      ++ok;
    else
      failed += (failed.empty() ? "T" : " T") + std::to_string(t.number);
  }
  out.detail = std::to_string(ok) + "/" + std::to_string(total) + " targets";
  if (total == 0 || ok != total) out.level = CheckLevel::Fail;
  if (!failed.empty()) out.detail += "; violated: " + failed;
  return out;
}

inline std::vector<CheckResult> check_study(std::span<const CellResult> cells, const StudyMatrix& m,
                                            const StudyChecks& c = {}) {
  return {check_targeting(cells, c), check_path_effort(cells, c), check_task_ordering(cells, m),
          check_depth_trend(cells, m, c), check_stiffness_perception(cells, m)};
}

}  // namespace needlesim
