#pragma once

// Quasi-static insertion plant.
//
// Inputs are the base position (axial and lateral) and the lateral template
// position. The base is clamped with zero slope; the template is a roller at a
// fixed station outside the tissue through which the needle slides. Every
// time the tip reaches a new element boundary inside the tissue, a contact
// spring is anchored there with its rest position offset from the tip by the
// bevel offset b, which makes the needle curve toward the bevel.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "needlesim/beam.hpp"
#include "needlesim/errors.hpp"
#include "needlesim/tissue.hpp"

namespace needlesim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Control inputs x = [x_base, y_base, y_template] in mm.
struct Inputs {
  double x_base = 0.0;
  double y_base = 0.0;
  double y_template = 0.0;

  Vec3 vec() const { return {x_base, y_base, y_template}; }
  static Inputs from(const Vec3& v) { return {v[0], v[1], v[2]}; }
  friend bool operator==(const Inputs&, const Inputs&) = default;
};

/// Outputs y = [x_tip, y_tip, k_tip].
struct Outputs {
  double x_tip = 0.0;
  double y_tip = 0.0;
  double k_tip = 0.0;

  Vec3 vec() const { return {x_tip, y_tip, k_tip}; }
  static Outputs from(const Vec3& v) { return {v[0], v[1], v[2]}; }
  friend bool operator==(const Outputs&, const Outputs&) = default;
};

struct SimConfig {
  NeedleProperties needle;
  LayerStack stack = default_layer_stack();
  FoundationLaw law;
  double bevel_offset = -1.55;    // b [mm]
  double template_offset = 22.0;  // template distance proximal of the skin [mm]
  double insertion_step = 1.0;    // [mm per control step]
  std::vector<double> parameter_scale = std::vector<double>(5, 1.0);  // mu multipliers
  SolverSettings solver;
  int max_bisections = 6;

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

inline void validate(const SimConfig& c) {
  validate(c.needle);
  if (c.stack.size() == 0) throw ConfigError("layer stack is empty");
  if (c.parameter_scale.size() != c.stack.size())
    throw ConfigError("parameter_scale needs one factor per layer");
  for (double s : c.parameter_scale)
    if (!(s > 0.0)) throw ConfigError("parameter_scale factors must be positive");
  if (!(c.template_offset > 0.0)) throw ConfigError("template must sit outside the tissue");
  if (!(c.template_offset < c.needle.length))
    throw ConfigError("template offset must be shorter than the needle");
  if (!(c.law.contact_width > 0.0)) throw ConfigError("contact width must be positive");
  if (!(c.law.lambda_min > 0.0 && c.law.lambda_min < 1.0))
    throw ConfigError("lambda_min must lie in (0, 1)");
  const double k = c.insertion_step / c.needle.element_length;
  if (!(k >= 1.0 - 1e-9) || std::abs(k - std::round(k)) > 1e-9)
    throw ConfigError("insertion step must be an integer multiple of the element length");
  if (!std::isfinite(c.bevel_offset)) throw ConfigError("bevel offset must be finite");
}

struct CutSample {
  double station = 0.0;
  double tip_y = 0.0;
  friend bool operator==(const CutSample&, const CutSample&) = default;
};

/// One plant (or one internal model of the plant).
class SimState {
 public:
  /// Needle poised with its tip on the skin, base and template at `entry_offset`.
  static SimState create(SimConfig config, double entry_offset) {
    validate(config);
    if (!std::isfinite(entry_offset)) throw ConfigError("entry offset must be finite");
    SimState s;
    s.stack_ = config.stack.scaled(config.parameter_scale);
    s.config_ = std::move(config);
    s.inputs_ = {-s.config_.needle.length, entry_offset, entry_offset};
    s.beam_ = BeamState(s.config_.needle, entry_offset);
    s.resolve(s.inputs_);
    return s;
  }

  const SimConfig& config() const noexcept { return config_; }
  const LayerStack& effective_stack() const noexcept { return stack_; }
  const Inputs& inputs() const noexcept { return inputs_; }
  const BeamState& beam() const noexcept { return beam_; }
  std::span<const ContactPoint> contacts() const noexcept { return contacts_; }
  std::span<const CutSample> cut_path() const noexcept { return cut_path_; }
  int last_newton_iterations() const noexcept { return last_iterations_; }

  double depth() const noexcept { return std::max(0.0, tip_station()); }
  double tip_station() const noexcept { return inputs_.x_base + config_.needle.length; }

  Outputs observe() const {
    const auto t = tip_outputs(beam_, config_.needle, inputs_.x_base);
    return {t.x, t.y, t.slope};
  }

  /// Applies an input increment. The base may only advance. The increment is
  /// split at every element boundary the tip reaches inside the tissue so that
  /// each new contact is anchored at the tip position of that moment.
  void apply_inputs(const Vec3& delta) {
    if (!delta.allFinite()) throw PreconditionError("input increment must be finite");
    if (delta[0] < -1e-12) throw PreconditionError("retraction is not supported");
    if (delta.isZero(0.0)) {
      last_iterations_ = 0;
      return;
    }
    const Inputs start = inputs_;
    const Vec3 x0 = start.vec();
    const double advance = std::max(0.0, delta[0]);
    const double h = config_.needle.element_length;
    const double t0 = tip_station();
    const double t1 = t0 + advance;
    const double limit = stack_.total_thickness();

    std::vector<double> fractions;
    if (advance > 0.0) {
      const double carved = contacts_.empty() ? 0.0 : contacts_.back().station;
      for (long k = std::max(1L, static_cast<long>(std::floor(t0 / h + 1e-9)));; ++k) {
        const double s = static_cast<double>(k) * h;
        if (s > t1 + 1e-9 || s > limit + 1e-9) break;
        if (s <= carved + 1e-9 || s < t0 - 1e-9) continue;
        fractions.push_back(std::clamp((s - t0) / advance, 0.0, 1.0));
      }
    }

    int iterations = 0;
    double reached = 0.0;
    for (double f : fractions) {
      iterations += advance_to(x0, delta, reached, f);
      reached = f;
      carve();
      iterations += solve_with_bisection(inputs_, inputs_);
    }
    if (reached < 1.0) iterations += advance_to(x0, delta, reached, 1.0);
    inputs_ = Inputs::from(x0 + delta);
    last_iterations_ = iterations;
  }

  /// Static response at arbitrary inputs with the current contacts, without
  /// carving new ones. Contacts ahead of a retracted tip act at the tip.
  Outputs evaluate(const Inputs& at) const {
    SimState probe = *this;
    probe.resolve(at, /*clamp_contacts=*/true);
    return probe.observe();
  }

  /// Independent copy whose layer moduli are the nominal ones times `mu_scale`.
  SimState fork_model(std::span<const double> mu_scale) const {
    SimState f = *this;
    f.config_.parameter_scale.assign(mu_scale.begin(), mu_scale.end());
    validate(f.config_);
    f.stack_ = f.config_.stack.scaled(f.config_.parameter_scale);
    f.resolve(f.inputs_);
    return f;
  }

  SimState fork_model(double uniform_scale) const {
    const std::vector<double> s(config_.stack.size(), uniform_scale);
    return fork_model(s);
  }

  /// FNV-1a over every mutable quantity; equal hashes for bit-identical states.
  std::uint64_t state_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](double v) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffU;
        h *= 1099511628211ULL;
      }
    };
    mix(inputs_.x_base);
    mix(inputs_.y_base);
    mix(inputs_.y_template);
    for (const auto& c : contacts_) {
      mix(c.station);
      mix(c.rest);
      mix(static_cast<double>(c.layer));
    }
    for (Eigen::Index i = 0; i < beam_.dofs().size(); ++i) mix(beam_.dofs()[i]);
    for (const auto& c : cut_path_) mix(c.tip_y);
    for (double s : config_.parameter_scale) mix(s);
    return h;
  }

 private:
  SimState() = default;

  std::vector<BoundaryCondition> boundary_conditions(const Inputs& at) const {
    const double template_pos = -config_.template_offset - at.x_base;
    if (!(template_pos > 0.0 && template_pos < config_.needle.length))
      throw ConsistencyError("template station does not lie on the needle");
    return {BoundaryCondition::clamp(0.0, at.y_base, 0.0),
            BoundaryCondition::roller(template_pos, at.y_template)};
  }

  int resolve(const Inputs& at, bool clamp_contacts = false) {
    const auto bcs = boundary_conditions(at);
    std::vector<ContactPoint> clamped;
    std::span<const ContactPoint> contacts = contacts_;
    const double tip = at.x_base + config_.needle.length;
    if (clamp_contacts && !contacts_.empty() && contacts_.back().station > tip) {
      clamped = contacts_;
      for (auto& c : clamped) c.station = std::min(c.station, tip);
      contacts = clamped;
    }
    BeamProblem problem{config_.needle, at.x_base, contacts, &stack_, config_.law, bcs, {}, {}};
    auto report = solve_static(beam_, problem, config_.solver);
    beam_ = std::move(report.state);
    inputs_ = at;
    return report.iterations;
  }

  // Moves from fraction `from` to fraction `to` of the increment.
  int advance_to(const Vec3& x0, const Vec3& delta, double from, double to) {
    return solve_with_bisection(Inputs::from(x0 + from * delta), Inputs::from(x0 + to * delta));
  }

  int solve_with_bisection(const Inputs& from, const Inputs& to, int depth = 0) {
    const BeamState saved = beam_;
    try {
      return resolve(to);
    } catch (const SolverFailure&) {
      beam_ = saved;
      if (depth >= config_.max_bisections)
        throw PlantFault("equilibrium solve failed after bisecting the input step");
      const Inputs mid = Inputs::from(0.5 * (from.vec() + to.vec()));
      int n = solve_with_bisection(from, mid, depth + 1);
      return n + solve_with_bisection(mid, to, depth + 1);
    }
  }

  void carve() {
    const double station = std::round(tip_station() / config_.needle.element_length) *
                           config_.needle.element_length;
    const double tip_y = observe().y_tip;
    contacts_.push_back({station, tip_y + config_.bevel_offset, stack_.index_at(station)});
    cut_path_.push_back({station, tip_y});
  }

  SimConfig config_;
  LayerStack stack_;
  Inputs inputs_;
  BeamState beam_;
  std::vector<ContactPoint> contacts_;
  std::vector<CutSample> cut_path_;
  int last_iterations_ = 0;
};

inline SimState new_simulation(const SimConfig& config, double entry_offset) {
  return SimState::create(config, entry_offset);
}

}  // namespace needlesim
