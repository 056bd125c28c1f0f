#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "needlesim/needlesim.hpp"

namespace fs = std::filesystem;
using namespace needlesim;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kConfig = 2, kSolver = 3, kNotConverged = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfiguration load(const std::string& path) {
  return path.empty() ? RunConfiguration{} : load_config(path);
}

std::ofstream open_output(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + file.string() + "'");
  return out;
}

int cmd_simulate(const RunConfiguration& cfg, double depth, double offset, const std::string& out_dir) {
  const double total = cfg.simulator.stack.total_thickness();
  if (!(depth >= 0.0 && depth <= total))
    throw UsageError("depth must lie in [0, " + format_number(total) + "] mm");
  SimState sim = new_simulation(cfg.simulator, offset);
  std::vector<StepLog> rows;
  int step = 0;
  insert_straight(sim, depth, [&](const SimState& s) {
    rows.push_back({++step, s.inputs(), s.observe(), {}, 0.0, 0.0, 0, s.last_newton_iterations(),
                    s.contacts().size()});
  });
  const fs::path file = fs::path(out_dir) / "simulation.csv";
  auto out = open_output(file);
  write_simulation_csv(out, rows);
  const Outputs y = sim.observe();
  std::printf("x_tip=%s y_tip=%s k_tip=%s csv=%s\n", format_number(y.x_tip).c_str(),
              format_number(y.y_tip).c_str(), format_number(y.k_tip).c_str(), file.string().c_str());
  return kOk;
}

int cmd_run(const RunConfiguration& cfg, int target_number, TaskKind task, const Strategy& strategy,
            const std::string& out_dir) {
  const Target target = find_target(target_number);
  PathSpec path;
  try {
    path = generate_path(target, cfg.simulator);
  } catch (const PathGenerationError& e) {
    std::printf("status=path_error reason=\"%s\"\n", e.what());
    return kSolver;
  }
  const StudyCell cell{target, task, strategy};
  const CellResult r = run_cell(cell, path, cfg.simulator, cfg.controller);
  const fs::path file = fs::path(out_dir) / ("traj_" + cell.id() + ".csv");
  auto out = open_output(file);
  write_run_csv(out, r.record);
  std::printf("cell=%s status=%s err=%s P_base=%s P_template=%s steps=%d csv=%s\n", cell.id().c_str(),
              to_string(r.record.status), format_number(r.metrics.final_err).c_str(),
              format_number(r.metrics.p_base).c_str(), format_number(r.metrics.p_template).c_str(),
              r.metrics.steps, file.string().c_str());
  if (!r.record.message.empty()) std::printf("reason=\"%s\"\n", r.record.message.c_str());
  switch (r.record.status) {
    case RunStatus::Converged: return kOk;
    case RunStatus::PlantFault:
    case RunStatus::JacobianFailure: return kSolver;
    case RunStatus::MaxSteps: return kNotConverged;
  }
  return kNotConverged;
}

int cmd_study(const RunConfiguration& cfg, const std::string& out_dir) {
  const StudyMatrix matrix = study_matrix(cfg.experiment);
  const StudyResult result = run_study(matrix, cfg.simulator, cfg.controller, worker_count());
  for (const auto& r : result.cells) {
    auto out = open_output(fs::path(out_dir) / ("traj_" + r.cell.id() + ".csv"));
    write_run_csv(out, r.record);
  }
  {
    auto out = open_output(fs::path(out_dir) / "summary.csv");
    write_summary_csv(out, result.cells);
  }
  for (const auto& [target, error] : result.path_errors)
    std::printf("path error for target %d: %s\n", target, error.c_str());
  StudyChecks checks;
  checks.stop_tolerance = cfg.controller.stop_tolerance;
  bool ok = true;
  for (const auto& c : check_study(result.cells, matrix, checks)) {
    std::printf("%s  %s: %s\n", to_string(c.level), c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed();
  }
  std::printf("wrote %zu cells to %s\n", result.cells.size(), (fs::path(out_dir) / "summary.csv").string().c_str());
  return ok ? kOk : kNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bevel-tip needle insertion simulator and shape-manipulation controllers"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "INI configuration file");

  auto* simulate = app.add_subcommand("simulate", "Straight open-loop insertion");
  double depth = 0.0, offset = 0.0;
  std::string out_dir;
  simulate->add_option("--depth", depth, "Insertion depth [mm]")->required();
  simulate->add_option("--offset", offset, "Entry offset of base and template [mm]");
  simulate->add_option("--out", out_dir, "Output directory");

  auto* run = app.add_subcommand("run", "Run one study cell");
  int target = 0;
  std::string task_name = "path";
  std::string strategy_name;
  std::optional<double> scale;
  run->add_option("--target", target, "Target number")->required()->check(CLI::Range(1, 12));
  run->add_option("--task", task_name, "path or point")->check(CLI::IsMember({"path", "point"}));
  run->add_option("--strategy", strategy_name, "data or mech")->check(CLI::IsMember({"data", "mech"}));
  run->add_option("--scale", scale, "Model scale of the mechanics controller")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Output directory");

  auto* study = app.add_subcommand("study", "Run the full study matrix");
  study->add_option("--out", out_dir, "Output directory");

  auto* print = app.add_subcommand("print-config", "Print the effective configuration");

  for (auto* sub : {simulate, run, study, print})
    sub->add_option("--config", config_path, "INI configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfiguration cfg = load(config_path);
    if (out_dir.empty()) out_dir = cfg.experiment.output_dir;
    if (*simulate) return cmd_simulate(cfg, depth, offset, out_dir);
    if (*run) {
      Strategy strategy = cfg.strategy;
      if (!strategy_name.empty()) strategy.kind = parse_strategy(strategy_name);
      if (scale) strategy.model_scale = *scale;
      return cmd_run(cfg, target, parse_task(task_name), strategy, out_dir);
    }
    if (*study) return cmd_study(cfg, out_dir);
    if (*print) {
      std::cout << to_ini(cfg);
      return kOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "solver fault: %s\n", e.what());
    return kSolver;
  }
  return kUsage;
}
