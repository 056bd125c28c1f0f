#pragma once

// Resolved-rate shape-manipulation control.
//
//   dx = -J^{-1} Kp (y - y_d)
//
// with J either estimated from plant feedback by Broyden rank-one updates
// (data-driven) or obtained by central differences on an internal,
// possibly mis-parameterised copy of the plant (mechanics-based).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "needlesim/errors.hpp"
#include "needlesim/insertion.hpp"

namespace needlesim {

struct JacobianEstimate {
  Mat3 matrix = Mat3::Identity();

  /// 2-norm condition number; infinite when singular.
  double condition() const {
    Eigen::JacobiSVD<Mat3> svd(matrix);
    const auto& s = svd.singularValues();
    if (!(s[2] > 0.0)) return std::numeric_limits<double>::infinity();
    return s[0] / s[2];
  }
};

struct ControllerConfig {
  Vec3 gains{0.5, 1.0, 0.1};  // diagonal of Kp
  double stop_tolerance = 0.25;  // [mm]
  int max_steps = 1000;
  double probe_epsilon = 0.01;   // central-difference step [mm]
  double threshold = 0.5;        // per-step lateral input cap [mm]
  double broyden_probe_size = 0.1;  // [mm]
  double broyden_reprobe_depth = 10.0;  // re-probe after this much insertion [mm]; 0 disables
  double condition_limit = 1e8;
  bool threshold_data_driven = true;
  bool threshold_mechanics = false;

  friend bool operator==(const ControllerConfig&, const ControllerConfig&) = default;
};

inline void validate(const ControllerConfig& c) {
  if (!(c.gains.array() > 0.0).all()) throw ConfigError("controller gains must be positive");
  if (!(c.stop_tolerance > 0.0)) throw ConfigError("stop tolerance must be positive");
  if (!(c.probe_epsilon > 0.0)) throw ConfigError("probe epsilon must be positive");
  if (!(c.threshold > 0.0)) throw ConfigError("threshold must be positive");
  if (!(c.broyden_probe_size > 0.0)) throw ConfigError("Broyden probe size must be positive");
  if (!(c.broyden_reprobe_depth >= 0.0)) throw ConfigError("Broyden re-probe depth must be non-negative");
  if (c.max_steps < 0) throw ConfigError("max_steps must be non-negative");
}

struct ControlCommand {
  Vec3 delta = Vec3::Zero();
  bool damped = false;  // J was too ill-conditioned for a plain inverse
};

/// dx = -J^{-1} Kp (y - y_d). Falls back to a damped least-squares inverse when
/// cond(J) exceeds `condition_limit`.
inline ControlCommand control_step(const JacobianEstimate& jacobian, const Vec3& y,
                                   const Vec3& y_desired, const Vec3& gains,
                                   double condition_limit = 1e8) {
  const Vec3 rhs = -(gains.asDiagonal() * (y - y_desired));
  const Mat3& j = jacobian.matrix;
  if (!j.allFinite()) throw JacobianFailure("Jacobian estimate is not finite");
  if (jacobian.condition() < condition_limit) return {j.partialPivLu().solve(rhs), false};
  const double damping = 1e-6 * j.norm();
  const Mat3 jtj = j.transpose() * j + damping * damping * Mat3::Identity();
  return {jtj.ldlt().solve(j.transpose() * rhs), true};
}

struct BroydenResult {
  JacobianEstimate jacobian;
  bool skipped = false;
};

/// Rank-one secant update J += (dy - J dx) dx^T / |dx|^2.
inline BroydenResult broyden_update(const JacobianEstimate& previous, const Vec3& dx,
                                    const Vec3& dy) {
  const double nn = dx.squaredNorm();
  if (!(std::sqrt(nn) >= 1e-12)) return {previous, true};
  JacobianEstimate out = previous;
  out.matrix += ((dy - previous.matrix * dx) / nn) * dx.transpose();
  return {out, false};
}

/// Scales dx uniformly so that neither lateral input moves more than `limit`.
inline Vec3 threshold_scale(const Vec3& dx, double limit) {
  if (!(limit > 0.0)) throw PreconditionError("threshold must be positive");
  const double lateral = std::max(std::abs(dx[1]), std::abs(dx[2]));
  if (lateral <= limit) return dx;
  return dx * (limit / lateral);
}

/// Central differences of `f` about `x`, one column per input.
template <class Fn>
JacobianEstimate finite_difference_jacobian(Fn&& f, const Vec3& x, double epsilon) {
  if (!(epsilon > 0.0)) throw PreconditionError("finite-difference step must be positive");
  JacobianEstimate out;
  for (int j = 0; j < 3; ++j) {
    Vec3 plus = x, minus = x;
    plus[j] += epsilon;
    minus[j] -= epsilon;
    const Vec3 fp = f(plus);
    const Vec3 fm = f(minus);
    out.matrix.col(j) = (fp - fm) / (2.0 * epsilon);
  }
  return out;
}

/// Jacobian of the model's static input-output map at its current inputs.
inline JacobianEstimate finite_difference_jacobian(const SimState& model, double epsilon) {
  try {
    return finite_difference_jacobian(
        [&](const Vec3& x) { return model.evaluate(Inputs::from(x)).vec(); },
        model.inputs().vec(), epsilon);
  } catch (const SolverFailure& e) {
    throw JacobianFailure(std::string("probe solve failed: ") + e.what());
  }
}

/// Any plant exposing apply_inputs(Vec3) and observe() -> Outputs.
template <class P>
concept Plant = requires(P p, const Vec3& dx) {
  p.apply_inputs(dx);
  { p.observe().vec() } -> std::convertible_to<Vec3>;
};

/// Initial Jacobian from three real probe moves, one per input axis.
template <Plant P>
JacobianEstimate broyden_initialize(P& plant, double probe_size) {
  if (!(probe_size > 0.0)) throw PreconditionError("probe size must be positive");
  JacobianEstimate out;
  for (int j = 0; j < 3; ++j) {
    const Vec3 before = plant.observe().vec();
    Vec3 dx = Vec3::Zero();
    dx[j] = probe_size;
    plant.apply_inputs(dx);
    out.matrix.col(j) = (plant.observe().vec() - before) / probe_size;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed loop

enum class TaskKind { PathFollowing, PointStabilization };

/// A desired tip trajectory (path-following) or a single goal pose.
struct Task {
  TaskKind kind = TaskKind::PointStabilization;
  Outputs goal;                   // final target pose
  std::vector<Outputs> waypoints;  // ordered by depth; path-following only

  /// Desired pose once the tip reaches `depth`.
  Outputs reference(double depth) const {
    if (kind == TaskKind::PointStabilization || waypoints.empty())
      return {depth, goal.y_tip, goal.k_tip};
    if (depth <= waypoints.front().x_tip) return {depth, waypoints.front().y_tip, waypoints.front().k_tip};
    if (depth >= waypoints.back().x_tip) return {depth, waypoints.back().y_tip, waypoints.back().k_tip};
    auto it = std::upper_bound(waypoints.begin(), waypoints.end(), depth,
                               [](double d, const Outputs& w) { return d < w.x_tip; });
    const Outputs& b = *it;
    const Outputs& a = *(it - 1);
    const double t = (depth - a.x_tip) / (b.x_tip - a.x_tip);
    return {depth, a.y_tip + t * (b.y_tip - a.y_tip), a.k_tip + t * (b.k_tip - a.k_tip)};
  }
};

enum class StrategyKind { DataDriven, MechanicsBased };

struct Strategy {
  StrategyKind kind = StrategyKind::DataDriven;
  double model_scale = 1.0;  // uniform mu multiplier of the internal model

  static Strategy data_driven() { return {StrategyKind::DataDriven, 1.0}; }
  static Strategy mechanics(double scale) { return {StrategyKind::MechanicsBased, scale}; }
  friend bool operator==(const Strategy&, const Strategy&) = default;
};

enum StepFlag : std::uint32_t {
  kFlagProbe = 1u << 0,          // Broyden initialisation move
  kFlagDampedInverse = 1u << 1,  // ill-conditioned J
  kFlagBroydenSkipped = 1u << 2,
  kFlagThresholded = 1u << 3,
  kFlagDepthClamped = 1u << 4,  // base advance limited to [0, remaining depth]
};

struct StepLog {
  int step = 0;
  Inputs inputs;
  Outputs outputs;
  Outputs desired;
  double err = 0.0;
  double condition = 0.0;
  std::uint32_t flags = 0;
  int newton_iterations = 0;
  std::size_t contacts = 0;
};

enum class RunStatus { Converged, MaxSteps, PlantFault, JacobianFailure };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::MaxSteps: return "max_steps";
    case RunStatus::PlantFault: return "plant_fault";
    case RunStatus::JacobianFailure: return "jacobian_failure";
  }
  return "unknown";
}

struct RunRecord {
  std::vector<StepLog> log;
  RunStatus status = RunStatus::MaxSteps;
  std::string message;
  Outputs goal;
  int steps = 0;  // control steps taken, probes excluded
  int isolation_violations = 0;  // plant state changed while a model was probed

  double final_err() const { return log.empty() ? 0.0 : log.back().err; }
};

/// Planar tip position error to the goal.
inline double error_magnitude(const Outputs& tip, const Outputs& goal) {
  return std::hypot(tip.x_tip - goal.x_tip, tip.y_tip - goal.y_tip);
}

/// Runs one task to completion on `plant`.
///
/// Every step advances a depth reference by at most one insertion step (never
/// beyond the goal depth). The advance is a feedforward on the base; the
/// resolved-rate law corrects the output predicted after that advance:
///   dx = a e1 - J^{-1} Kp (y + J a e1 - y_ref).
inline RunRecord run_control_loop(SimState& plant, const Strategy& strategy, const Task& task,
                                  const ControllerConfig& config) {
  validate(config);
  RunRecord rec;
  rec.goal = task.goal;
  const double step_size = plant.config().insertion_step;
  const bool data_driven = strategy.kind == StrategyKind::DataDriven;
  const bool thresholded = data_driven ? config.threshold_data_driven : config.threshold_mechanics;

  auto log_row = [&](int step, const Outputs& desired, double cond, std::uint32_t flags) {
    const Outputs y = plant.observe();
    rec.log.push_back({step, plant.inputs(), y, desired, error_magnitude(y, task.goal), cond, flags,
                       plant.last_newton_iterations(), plant.contacts().size()});
  };

  log_row(0, task.reference(plant.observe().x_tip), 0.0, 0);
  if (rec.log.back().err <= config.stop_tolerance) {
    rec.status = RunStatus::Converged;
    return rec;
  }

  JacobianEstimate jac;
  std::optional<SimState> model;
  double probed_at = 0.0;

  struct LoggedPlant {
    SimState& plant;
    const std::function<void()>& log;
    void apply_inputs(const Vec3& dx) {
      plant.apply_inputs(dx);
      log();
    }
    Outputs observe() const { return plant.observe(); }
  };
  const std::function<void()> log_probe = [&] {
    log_row(0, task.reference(plant.observe().x_tip), 0.0, kFlagProbe);
  };
  auto probe_plant = [&] {
    LoggedPlant logged{plant, log_probe};
    probed_at = plant.observe().x_tip;
    jac = broyden_initialize(logged, config.broyden_probe_size);
  };
  try {
    if (data_driven) {
      probe_plant();
    } else {
      model = plant.fork_model(strategy.model_scale);
      const auto h = plant.state_hash();
      jac = finite_difference_jacobian(*model, config.probe_epsilon);
      if (plant.state_hash() != h) ++rec.isolation_violations;
    }

    for (int n = 1; n <= config.max_steps; ++n) {
      const Outputs y = plant.observe();
      if (error_magnitude(y, task.goal) <= config.stop_tolerance) {
        rec.status = RunStatus::Converged;
        return rec;
      }
      if (data_driven && config.broyden_reprobe_depth > 0.0 &&
          y.x_tip - probed_at >= config.broyden_reprobe_depth) {
        probe_plant();
        continue;
      }
      std::uint32_t flags = 0;
      const double advance = std::clamp(task.goal.x_tip - y.x_tip, 0.0, step_size);
      const Outputs desired = task.reference(y.x_tip + advance);
      const Vec3 feedforward(advance, 0.0, 0.0);
      const Vec3 predicted = y.vec() + jac.matrix * feedforward;
      const double cond = jac.condition();
      const auto cmd = control_step(jac, predicted, desired.vec(), config.gains, config.condition_limit);
      if (cmd.damped) flags |= kFlagDampedInverse;
      Vec3 dx = feedforward + cmd.delta;
      if (thresholded) {
        const Vec3 scaled = threshold_scale(dx, config.threshold);
        if (scaled != dx) flags |= kFlagThresholded;
        dx = scaled;
      }
      const double max_advance = std::max(0.0, task.goal.x_tip - y.x_tip);
      if (dx[0] < 0.0 || dx[0] > max_advance) {
        dx[0] = std::clamp(dx[0], 0.0, max_advance);
        flags |= kFlagDepthClamped;
      }

      plant.apply_inputs(dx);
      const Outputs y_new = plant.observe();
      rec.steps = n;

      if (data_driven) {
        const auto upd = broyden_update(jac, dx, y_new.vec() - y.vec());
        if (upd.skipped) flags |= kFlagBroydenSkipped;
        jac = upd.jacobian;
      } else {
        model->apply_inputs(dx);
        const auto h = plant.state_hash();
        jac = finite_difference_jacobian(*model, config.probe_epsilon);
        if (plant.state_hash() != h) ++rec.isolation_violations;
      }
      log_row(n, desired, cond, flags);
    }
    rec.status = error_magnitude(plant.observe(), task.goal) <= config.stop_tolerance
                     ? RunStatus::Converged
                     : RunStatus::MaxSteps;
  } catch (const PlantFault& e) {
    rec.status = RunStatus::PlantFault;
    rec.message = e.what();
  } catch (const SolverFailure& e) {
    rec.status = RunStatus::PlantFault;
    rec.message = e.what();
  } catch (const JacobianFailure& e) {
    rec.status = RunStatus::JacobianFailure;
    rec.message = e.what();
  }
  return rec;
}

}  // namespace needlesim
