#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "needlesim/controllers.hpp"
#include "needlesim/experiments.hpp"

using namespace needlesim;

namespace {

const Vec3 kGains(0.5, 1.0, 0.1);

struct LinearPlant {
  Mat3 a;
  Vec3 x = Vec3::Zero();
  void apply_inputs(const Vec3& dx) { x += dx; }
  Outputs observe() const { return Outputs::from(a * x + Vec3(1.0, -2.0, 3.0)); }
};

Mat3 random_matrix(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = n(rng);
  return m;
}

Vec3 random_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng), n(rng)};
}

}  // namespace

TEST(ControlStep, ZeroErrorGivesZeroInput) {
  const auto c = control_step({}, Vec3(1, 2, 3), Vec3(1, 2, 3), kGains);
  EXPECT_EQ(c.delta, Vec3::Zero());
  EXPECT_FALSE(c.damped);
}

TEST(ControlStep, IdentityJacobian) {
  const auto c = control_step({}, Vec3(1, 1, 1), Vec3::Zero(), kGains);
  EXPECT_TRUE(c.delta.isApprox(Vec3(-0.5, -1.0, -0.1)));
}

TEST(ControlStep, DiagonalJacobian) {
  JacobianEstimate j{Vec3(2, 4, 10).asDiagonal()};
  const auto c = control_step(j, Vec3(1, 1, 1), Vec3::Zero(), kGains);
  EXPECT_NEAR(c.delta[0], -0.25, 1e-15);
  EXPECT_NEAR(c.delta[1], -0.25, 1e-15);
  EXPECT_NEAR(c.delta[2], -0.01, 1e-15);
}

TEST(ControlStep, GainScaling) {
  std::mt19937_64 rng(3);
  const JacobianEstimate j{random_matrix(rng)};
  const Vec3 y = random_vector(rng), yd = random_vector(rng);
  const auto one = control_step(j, y, yd, kGains);
  const auto two = control_step(j, y, yd, 2.0 * kGains);
  EXPECT_TRUE(two.delta.isApprox(2.0 * one.delta, 1e-14));
}

TEST(ControlStep, IllConditionedFallsBackToDamping) {
  Mat3 m = Mat3::Identity();
  m(2, 2) = 0.0;
  JacobianEstimate j{m};
  EXPECT_TRUE(std::isinf(j.condition()));
  const auto c = control_step(j, Vec3(1, 1, 1), Vec3::Zero(), kGains);
  EXPECT_TRUE(c.damped);
  EXPECT_TRUE(c.delta.allFinite());
  EXPECT_NEAR(c.delta[0], -0.5, 1e-9);
  EXPECT_NEAR(c.delta[2], 0.0, 1e-12);
  EXPECT_THROW(control_step({Mat3::Constant(std::nan(""))}, Vec3::Zero(), Vec3::Ones(), kGains),
               JacobianFailure);
}

TEST(Broyden, Examples) {
  const auto same = broyden_update({}, Vec3(0.3, -1.0, 2.0), Vec3(0.3, -1.0, 2.0));
  EXPECT_FALSE(same.skipped);
  EXPECT_EQ(same.jacobian.matrix, Mat3::Identity());
  const auto r = broyden_update({}, Vec3(1, 0, 0), Vec3(2, 0, 0));
  EXPECT_EQ(r.jacobian.matrix, Mat3(Vec3(2, 1, 1).asDiagonal()));
}

TEST(Broyden, SkipsTinyStep) {
  const auto r = broyden_update({}, Vec3(1e-13, 0, 0), Vec3(1, 1, 1));
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.jacobian.matrix, Mat3::Identity());
}

TEST(Broyden, SecantAndMinimalChange) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const JacobianEstimate prev{random_matrix(rng)};
    const Vec3 dx = random_vector(rng), dy = random_vector(rng);
    const auto j = broyden_update(prev, dx, dy).jacobian.matrix;
    ASSERT_LE((j * dx - dy).norm(), 1e-10 * dy.norm());
    // Any other secant-satisfying rank-one correction changes J at least as much.
    const Vec3 z = random_vector(rng);
    const Mat3 other = prev.matrix + (dy - prev.matrix * dx) * z.transpose() / z.dot(dx);
    ASSERT_LE((j - prev.matrix).norm(), (other - prev.matrix).norm() * (1 + 1e-12));
  }
}

TEST(Threshold, Examples) {
  EXPECT_EQ(threshold_scale(Vec3(1, 0.2, 0.3), 0.5), Vec3(1, 0.2, 0.3));
  EXPECT_TRUE(threshold_scale(Vec3(1, 2, 1), 0.5).isApprox(Vec3(0.25, 0.5, 0.25)));
  EXPECT_TRUE(threshold_scale(Vec3(0, -4, -2), 0.5).isApprox(Vec3(0, -0.5, -0.25)));
  EXPECT_THROW(threshold_scale(Vec3::Ones(), 0.0), PreconditionError);
}

TEST(Threshold, Idempotent) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 dx = 3.0 * random_vector(rng);
    const Vec3 once = threshold_scale(dx, 0.5);
    EXPECT_EQ(threshold_scale(once, 0.5), once);
    EXPECT_LE(std::max(std::abs(once[1]), std::abs(once[2])), 0.5 + 1e-15);
  }
}

TEST(FiniteDifference, ExactOnAffineMaps) {
  std::mt19937_64 rng(9);
  const Mat3 a = random_matrix(rng);
  const Vec3 b = random_vector(rng);
  for (double eps : {0.01, 0.25, 1.0}) {
    const auto j = finite_difference_jacobian([&](const Vec3& x) -> Vec3 { return a * x + b; },
                                              random_vector(rng), eps);
    EXPECT_LT((j.matrix - a).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(FiniteDifference, ExactOnQuadratic) {
  const auto j = finite_difference_jacobian(
      [](const Vec3& x) -> Vec3 { return {x[0] * x[0], 0.0, 0.0}; }, Vec3(1, 0, 0), 0.1);
  EXPECT_DOUBLE_EQ(j.matrix(0, 0), 2.0);
  EXPECT_THROW(finite_difference_jacobian([](const Vec3& x) { return x; }, Vec3::Zero(), 0.0),
               PreconditionError);
}

TEST(FiniteDifference, StepSizeRobustOnModel) {
  SimState s = new_simulation({}, 0.0);
  insert_straight(s, 30.0);
  const auto hash = s.state_hash();
  const Mat3 a = finite_difference_jacobian(s, 0.01).matrix;
  const Mat3 b = finite_difference_jacobian(s, 0.001).matrix;
  EXPECT_EQ(s.state_hash(), hash);
  EXPECT_LT((a - b).norm(), 1e-3 * b.norm());
  EXPECT_NEAR(a(0, 0), 1.0, 1e-9);
}

TEST(BroydenInitialize, RecoversLinearPlant) {
  std::mt19937_64 rng(13);
  LinearPlant p{random_matrix(rng)};
  const auto j = broyden_initialize(p, 0.1);
  EXPECT_LT((j.matrix - p.a).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(broyden_initialize(p, 0.0), PreconditionError);
}

TEST(BroydenInitialize, RealPlantAxialSensitivity) {
  SimState s = new_simulation({}, 0.0);
  s.apply_inputs(Vec3(1.0, 0.0, 0.0));
  const auto j = broyden_initialize(s, 0.1);
  EXPECT_NEAR(j.matrix(0, 0), 1.0, 0.05);
  EXPECT_NEAR(s.inputs().y_base, 0.1, 1e-12);
  EXPECT_NEAR(s.inputs().y_template, 0.1, 1e-12);
}

TEST(Task, ReferenceInterpolatesWaypoints) {
  Task t;
  t.kind = TaskKind::PathFollowing;
  t.goal = {2.0, -1.0, -0.02};
  t.waypoints = {{0, 0, 0}, {1, -0.5, -0.01}, {2, -1.0, -0.02}};
  const Outputs r = t.reference(1.5);
  EXPECT_DOUBLE_EQ(r.x_tip, 1.5);
  EXPECT_DOUBLE_EQ(r.y_tip, -0.75);
  EXPECT_DOUBLE_EQ(r.k_tip, -0.015);
  EXPECT_DOUBLE_EQ(t.reference(5.0).y_tip, -1.0);
  t.kind = TaskKind::PointStabilization;
  EXPECT_EQ(t.reference(0.5), (Outputs{0.5, -1.0, -0.02}));
}

TEST(ControlLoop, GoalAtCurrentPoseTakesNoSteps) {
  SimState s = new_simulation({}, 0.0);
  Task t;
  t.goal = s.observe();
  const auto r = run_control_loop(s, Strategy::data_driven(), t, {});
  EXPECT_EQ(r.status, RunStatus::Converged);
  EXPECT_EQ(r.steps, 0);
  EXPECT_EQ(r.final_err(), 0.0);
}

TEST(ControlLoop, ErrorColumnMatchesRecomputation) {
  const Target t = find_target(1);
  const SimConfig sc;
  const auto path = generate_path(t, sc);
  const auto r = run_cell({t, TaskKind::PointStabilization, Strategy::data_driven()}, path, sc, {});
  ASSERT_EQ(r.record.status, RunStatus::Converged);
  EXPECT_LE(r.metrics.final_err, 0.25);
  for (const auto& row : r.record.log)
    EXPECT_EQ(row.err, std::hypot(row.outputs.x_tip - t.depth, row.outputs.y_tip - t.deflection));
  int probes = 0;
  for (const auto& row : r.record.log) probes += (row.flags & kFlagProbe) ? 1 : 0;
  EXPECT_GE(probes, 3);
}

TEST(ControlLoop, DataDrivenIgnoresModelScale) {
  const Target t = find_target(2);
  const SimConfig sc;
  const auto path = generate_path(t, sc);
  const auto a = run_cell({t, TaskKind::PointStabilization, {StrategyKind::DataDriven, 1.5}}, path, sc, {});
  const auto b = run_cell({t, TaskKind::PointStabilization, {StrategyKind::DataDriven, 0.5}}, path, sc, {});
  ASSERT_EQ(a.record.log.size(), b.record.log.size());
  for (std::size_t i = 0; i < a.record.log.size(); ++i) {
    EXPECT_EQ(a.record.log[i].inputs, b.record.log[i].inputs);
    EXPECT_EQ(a.record.log[i].outputs, b.record.log[i].outputs);
  }
}

TEST(ControlLoop, MechanicsNeverMutatesPlant) {
  const Target t = find_target(1);
  const SimConfig sc;
  const auto path = generate_path(t, sc);
  const auto r = run_cell({t, TaskKind::PathFollowing, Strategy::mechanics(1.5)}, path, sc, {});
  EXPECT_EQ(r.record.status, RunStatus::Converged);
  EXPECT_EQ(r.record.isolation_violations, 0);
}

TEST(ControlLoop, MaxStepsIsReported) {
  const Target t = find_target(1);
  const SimConfig sc;
  const auto path = generate_path(t, sc);
  ControllerConfig cc;
  cc.max_steps = 3;
  const auto r = run_cell({t, TaskKind::PathFollowing, Strategy::mechanics(1.0)}, path, sc, cc);
  EXPECT_EQ(r.record.status, RunStatus::MaxSteps);
  EXPECT_EQ(r.record.steps, 3);
}

TEST(ControllerConfig, Validation) {
  ControllerConfig c;
  c.gains[1] = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.stop_tolerance = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.probe_epsilon = -1.0;
  EXPECT_THROW(validate(c), ConfigError);
}
