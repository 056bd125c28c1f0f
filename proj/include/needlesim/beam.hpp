#pragma once

// Static Euler-Bernoulli needle on a nonlinear tissue foundation.
//
// The needle is discretised with 2-node Hermite cubic elements carrying a
// lateral deflection v and a rotation theta per node. Tissue contacts and
// boundary conditions may sit anywhere along the needle; they act through the
// element shape functions. Essential boundary conditions are linear
// constraints C q = d enforced with Lagrange multipliers.

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "needlesim/errors.hpp"
#include "needlesim/tissue.hpp"

namespace needlesim {

struct NeedleProperties {
  double length = 170.0;              // [mm]
  double flexural_rigidity = 2.55e4;  // EI [N mm^2]
  double element_length = 1.0;        // [mm]
  double diameter = 1.27;             // 18 gauge [mm], informational

  std::size_t element_count() const {
    return static_cast<std::size_t>(std::llround(length / element_length));
  }
  std::size_t node_count() const { return element_count() + 1; }

  friend bool operator==(const NeedleProperties&, const NeedleProperties&) = default;
};

inline void validate(const NeedleProperties& needle) {
  if (!(needle.flexural_rigidity > 0.0)) throw ConfigError("flexural rigidity must be positive");
  if (!(needle.length > 0.0) || !(needle.element_length > 0.0))
    throw ConfigError("needle and element lengths must be positive");
  const double n = needle.length / needle.element_length;
  if (std::abs(n - std::round(n)) > 1e-9 * n)
    throw ConfigError("needle length must be an integer multiple of the element length");
}

/// Nodal solution. Positions are measured along the needle from its base.
class BeamState {
 public:
  BeamState() = default;

  explicit BeamState(const NeedleProperties& needle, double deflection = 0.0)
      : dofs_(Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(needle.node_count()))),
        positions_(needle.node_count()) {
    for (std::size_t j = 0; j < positions_.size(); ++j) {
      positions_[j] = static_cast<double>(j) * needle.element_length;
      dofs_[2 * static_cast<Eigen::Index>(j)] = deflection;
    }
  }

  std::size_t node_count() const noexcept { return positions_.size(); }
  double deflection(std::size_t j) const { return dofs_[2 * static_cast<Eigen::Index>(j)]; }
  double rotation(std::size_t j) const { return dofs_[2 * static_cast<Eigen::Index>(j) + 1]; }
  std::span<const double> node_positions() const noexcept { return positions_; }

  const Eigen::VectorXd& dofs() const noexcept { return dofs_; }
  Eigen::VectorXd& dofs() noexcept { return dofs_; }

  friend bool operator==(const BeamState& a, const BeamState& b) {
    return a.positions_ == b.positions_ && a.dofs_.size() == b.dofs_.size() &&
           (a.dofs_.array() == b.dofs_.array()).all();
  }

 private:
  Eigen::VectorXd dofs_;  // [v0, theta0, v1, theta1, ...]
  std::vector<double> positions_;
};

struct BoundaryCondition {
  enum class Kind { Clamp, Roller };

  double position = 0.0;  // along the needle [mm]
  Kind kind = Kind::Clamp;
  double deflection = 0.0;
  double rotation = 0.0;  // ignored for rollers

  static BoundaryCondition clamp(double position, double deflection, double rotation = 0.0) {
    return {position, Kind::Clamp, deflection, rotation};
  }
  static BoundaryCondition roller(double position, double deflection) {
    return {position, Kind::Roller, deflection, 0.0};
  }
};

/// Tissue spring anchored where the bevel tip cut the tissue.
struct ContactPoint {
  double station = 0.0;  // axial position in the tissue frame [mm]
  double rest = 0.0;     // lateral rest position of the spring [mm]
  std::size_t layer = 0;  // index into the layer stack

  friend bool operator==(const ContactPoint&, const ContactPoint&) = default;
};

struct LinearSpring {
  double position = 0.0;  // along the needle [mm]
  double rest = 0.0;
  double stiffness = 0.0;  // [N/mm]
};

struct PointLoad {
  double position = 0.0;  // along the needle [mm]
  double force = 0.0;     // lateral [N]
};

struct SolverSettings {
  double tolerance = 1e-8;  // residual infinity norm [N]
  int max_iterations = 50;
  int max_halvings = 12;

  friend bool operator==(const SolverSettings&, const SolverSettings&) = default;
};

/// Everything that defines one static solve. Contact stations are converted to
/// needle coordinates with `base_station`, the tissue-frame position of the needle base.
struct BeamProblem {
  NeedleProperties needle;
  double base_station = 0.0;
  std::span<const ContactPoint> contacts;
  const LayerStack* stack = nullptr;
  FoundationLaw law;
  std::span<const BoundaryCondition> bcs;
  std::span<const LinearSpring> springs;
  std::span<const PointLoad> loads;
};

using ElementMatrix = Eigen::Matrix4d;

/// Hermite cubic bending stiffness for DOFs [v1, theta1, v2, theta2].
inline ElementMatrix element_matrices(double flexural_rigidity, double h) {
  const double c = flexural_rigidity / (h * h * h);
  ElementMatrix k;
  // clang-format off
  k <<  12.0,    6.0 * h,   -12.0,    6.0 * h,
        6.0 * h, 4.0 * h * h, -6.0 * h, 2.0 * h * h,
       -12.0,   -6.0 * h,    12.0,   -6.0 * h,
        6.0 * h, 2.0 * h * h, -6.0 * h, 4.0 * h * h;
  // clang-format on
  return c * k;
}

/// Element index and Hermite shape function values at a needle position.
struct ShapeSample {
  Eigen::Index first_dof = 0;
  Eigen::Vector4d n;      // deflection weights
  Eigen::Vector4d dn;     // rotation (slope) weights
};

inline ShapeSample shape_at(const NeedleProperties& needle, double s) {
  const double len = needle.length;
  const double tol = 1e-9 * len;
  if (s < -tol || s > len + tol)
    throw ConsistencyError("position " + std::to_string(s) + " mm does not lie on the needle");
  s = std::clamp(s, 0.0, len);
  const double h = needle.element_length;
  const auto ne = needle.element_count();
  auto e = static_cast<std::size_t>(std::floor(s / h));
  if (e >= ne) e = ne - 1;
  const double xi = (s - static_cast<double>(e) * h) / h;
  const double xi2 = xi * xi, xi3 = xi2 * xi;
  ShapeSample out;
  out.first_dof = 2 * static_cast<Eigen::Index>(e);
  out.n << 1.0 - 3.0 * xi2 + 2.0 * xi3, h * (xi - 2.0 * xi2 + xi3), 3.0 * xi2 - 2.0 * xi3,
      h * (xi3 - xi2);
  out.dn << (-6.0 * xi + 6.0 * xi2) / h, 1.0 - 4.0 * xi + 3.0 * xi2, (6.0 * xi - 6.0 * xi2) / h,
      3.0 * xi2 - 2.0 * xi;
  return out;
}

inline double deflection_at(const BeamState& state, const NeedleProperties& needle, double s) {
  const auto sample = shape_at(needle, s);
  return sample.n.dot(state.dofs().segment<4>(sample.first_dof));
}

inline double slope_at(const BeamState& state, const NeedleProperties& needle, double s) {
  const auto sample = shape_at(needle, s);
  return sample.dn.dot(state.dofs().segment<4>(sample.first_dof));
}

struct Assembly {
  Eigen::SparseMatrix<double> tangent;  // bending + foundation, unconstrained
  Eigen::VectorXd residual;             // internal minus external forces, unconstrained
  Eigen::MatrixXd constraints;          // C, one row per prescribed quantity
  Eigen::VectorXd prescribed;           // d
};

namespace detail {

inline void check_boundary_conditions(std::span<const BoundaryCondition> bcs) {
  int clamps = 0, rollers = 0;
  for (std::size_t i = 0; i < bcs.size(); ++i) {
    (bcs[i].kind == BoundaryCondition::Kind::Clamp ? clamps : rollers)++;
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(bcs[i].position - bcs[j].position) < 1e-12)
        throw ConsistencyError("more than one boundary condition at the same position");
  }
  if (clamps == 0 && rollers < 2)
    throw ConsistencyError("boundary conditions leave a rigid-body mode");
}

template <class Fn>
void for_each_spring(const BeamProblem& problem, Fn&& fn) {
  for (const auto& c : problem.contacts) {
    if (problem.stack == nullptr) throw ConsistencyError("contacts require a layer stack");
    const auto& layer = problem.stack->layers()[c.layer];
    fn(c.station - problem.base_station, c.rest, [&](double delta) {
      return spring_response(layer, delta, problem.law);
    });
  }
  for (const auto& s : problem.springs) {
    fn(s.position, s.rest, [&](double delta) {
      return SpringResponse{-s.stiffness * delta, s.stiffness};
    });
  }
}

}  // namespace detail

/// Tangent and residual at `state`. The residual is the internal force vector
/// (bending plus foundation reaction) minus applied point loads.
inline Assembly assemble(const BeamState& state, const BeamProblem& problem) {
  const auto& needle = problem.needle;
  const auto ndof = static_cast<Eigen::Index>(2 * needle.node_count());
  if (state.dofs().size() != ndof) throw ConsistencyError("beam state does not match the mesh");
  detail::check_boundary_conditions(problem.bcs);

  const ElementMatrix ke = element_matrices(needle.flexural_rigidity, needle.element_length);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(16 * needle.element_count() + 16 * problem.contacts.size() +
                   16 * problem.springs.size());
  Eigen::VectorXd residual = Eigen::VectorXd::Zero(ndof);
  const auto& q = state.dofs();

  for (std::size_t e = 0; e < needle.element_count(); ++e) {
    const auto d0 = 2 * static_cast<Eigen::Index>(e);
    residual.segment<4>(d0) += ke * q.segment<4>(d0);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) triplets.emplace_back(d0 + a, d0 + b, ke(a, b));
  }

  detail::for_each_spring(problem, [&](double s, double rest, auto&& response) {
    const auto sample = shape_at(needle, s);
    const double v = sample.n.dot(q.segment<4>(sample.first_dof));
    const SpringResponse r = response(v - rest);
    residual.segment<4>(sample.first_dof) -= r.force * sample.n;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        triplets.emplace_back(sample.first_dof + a, sample.first_dof + b,
                              r.stiffness * sample.n[a] * sample.n[b]);
  });

  for (const auto& load : problem.loads) {
    const auto sample = shape_at(needle, load.position);
    residual.segment<4>(sample.first_dof) -= load.force * sample.n;
  }

  Assembly out;
  out.tangent.resize(ndof, ndof);
  out.tangent.setFromTriplets(triplets.begin(), triplets.end());
  out.residual = std::move(residual);

  Eigen::Index rows = 0;
  for (const auto& bc : problem.bcs) rows += bc.kind == BoundaryCondition::Kind::Clamp ? 2 : 1;
  out.constraints = Eigen::MatrixXd::Zero(rows, ndof);
  out.prescribed.resize(rows);
  Eigen::Index r = 0;
  for (const auto& bc : problem.bcs) {
    const auto sample = shape_at(needle, bc.position);
    out.constraints.block<1, 4>(r, sample.first_dof) = sample.n.transpose();
    out.prescribed[r++] = bc.deflection;
    if (bc.kind == BoundaryCondition::Kind::Clamp) {
      out.constraints.block<1, 4>(r, sample.first_dof) = sample.dn.transpose();
      out.prescribed[r++] = bc.rotation;
    }
  }
  return out;
}

/// Residual with the components along the constraint normals removed, i.e. the
/// out-of-balance force on the unconstrained degrees of freedom.
inline Eigen::VectorXd free_residual(const Assembly& a) {
  const Eigen::MatrixXd& c = a.constraints;
  if (c.rows() == 0) return a.residual;
  const Eigen::MatrixXd cct = c * c.transpose();
  const Eigen::VectorXd lambda = cct.ldlt().solve(c * a.residual);
  return a.residual - c.transpose() * lambda;
}

struct SolveReport {
  BeamState state;
  int iterations = 0;
  double residual_norm = 0.0;
};

/// Newton-Raphson equilibrium, warm-started from `initial`. The update is halved
/// while it increases the residual.
inline SolveReport solve_static(const BeamState& initial, const BeamProblem& problem,
                                const SolverSettings& settings = {}) {
  BeamState state = initial;
  std::vector<double> trace;
  const auto ndof = state.dofs().size();

  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  bool analysed = false;

  auto kkt_step = [&](const Assembly& a) {
    const auto m = a.constraints.rows();
    Eigen::SparseMatrix<double> kkt(ndof + m, ndof + m);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(a.tangent.nonZeros() + 8 * m));
    for (int k = 0; k < a.tangent.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(a.tangent, k); it; ++it)
        t.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index r = 0; r < m; ++r)
      for (Eigen::Index j = 0; j < ndof; ++j)
        if (a.constraints(r, j) != 0.0) {
          t.emplace_back(ndof + r, j, a.constraints(r, j));
          t.emplace_back(j, ndof + r, a.constraints(r, j));
        }
    kkt.setFromTriplets(t.begin(), t.end());
    if (!analysed) {
      lu.analyzePattern(kkt);
      analysed = true;
    }
    lu.factorize(kkt);
    if (lu.info() != Eigen::Success)
      throw SolverFailure("singular equilibrium system", trace);
    Eigen::VectorXd rhs(ndof + m);
    rhs.head(ndof) = -a.residual;
    rhs.tail(m) = a.prescribed - a.constraints * state.dofs();
    Eigen::VectorXd sol = lu.solve(rhs);
    return Eigen::VectorXd(sol.head(ndof));
  };

  auto infeasibility = [&](const Assembly& a) {
    return a.constraints.rows() == 0
               ? 0.0
               : (a.constraints * state.dofs() - a.prescribed).lpNorm<Eigen::Infinity>();
  };

  Assembly a = assemble(state, problem);
  double norm = free_residual(a).lpNorm<Eigen::Infinity>();
  trace.push_back(norm);
  int it = 0;
  while (norm > settings.tolerance || infeasibility(a) > 1e-12) {
    if (it >= settings.max_iterations)
      throw SolverFailure("Newton-Raphson did not converge in " + std::to_string(it) + " iterations",
                          trace);
    const bool feasible = infeasibility(a) <= 1e-12;
    const Eigen::VectorXd step = kkt_step(a);
    const Eigen::VectorXd base = state.dofs();
    double scale = 1.0;
    state.dofs() = base + step;
    a = assemble(state, problem);
    double trial = free_residual(a).lpNorm<Eigen::Infinity>();
    for (int halving = 0; feasible && trial > norm && halving < settings.max_halvings; ++halving) {
      scale *= 0.5;
      state.dofs() = base + scale * step;
      a = assemble(state, problem);
      trial = free_residual(a).lpNorm<Eigen::Infinity>();
    }
    norm = trial;
    ++it;
    trace.push_back(norm);
    if (!std::isfinite(norm)) throw SolverFailure("Newton-Raphson diverged", trace);
  }
  return {std::move(state), it, norm};
}

struct TipOutputs {
  double x = 0.0;
  double y = 0.0;
  double slope = 0.0;
};

/// Tip pose of an inextensible needle whose base sits at `base_axial_position`.
inline TipOutputs tip_outputs(const BeamState& state, const NeedleProperties& needle,
                              double base_axial_position) {
  const auto last = state.node_count() - 1;
  return {base_axial_position + needle.length, state.deflection(last), state.rotation(last)};
}

}  // namespace needlesim
