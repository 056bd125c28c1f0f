#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "needlesim/experiments.hpp"

using namespace needlesim;

TEST(Targets, BuiltinTable) {
  const auto t = builtin_targets();
  ASSERT_EQ(t.size(), 12u);
  EXPECT_EQ(t.front(), (Target{1, 30.62, -1.00, -2.00}));
  EXPECT_EQ(t.back(), (Target{9, 69.02, -4.55, -6.00}));
  const std::vector<int> order{1, 2, 3, 4, 12, 11, 5, 6, 10, 7, 8, 9};
  std::set<int> seen;
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t[i].number, order[i]);
    seen.insert(t[i].number);
    if (i > 0) EXPECT_GE(t[i].depth, t[i - 1].depth);
  }
  EXPECT_EQ(seen.size(), 12u);
}

TEST(Targets, Lookup) {
  EXPECT_EQ(find_target(10), (Target{10, 61.82, -3.78, -6.00}));
  EXPECT_EQ(find_target(11).depth, 45.02);
  EXPECT_THROW(find_target(13), PreconditionError);
  EXPECT_THROW(find_target(0), PreconditionError);
  const Outputs p = find_target(3).pose();
  EXPECT_EQ(p, (Outputs{35.42, -1.38, -0.03}));
}

TEST(GeneratePath, SamplingAndEndpoints) {
  const SimConfig sc;
  const Target t = find_target(1);
  const auto path = generate_path(t, sc);
  ASSERT_EQ(path.waypoints.size(), static_cast<std::size_t>(std::ceil(t.depth / sc.insertion_step)) + 1);
  EXPECT_EQ(path.waypoints.front().x_tip, 0.0);
  EXPECT_NEAR(path.waypoints.front().y_tip, path.entry_offset, 1e-12);
  EXPECT_NEAR(path.waypoints.back().x_tip, t.depth, 1e-6);
  EXPECT_NEAR(path.waypoints.back().y_tip, t.deflection, 0.5);
  EXPECT_NEAR(path.open_loop_deflection, t.deflection, 0.3);
  EXPECT_NEAR(path.entry_offset, t.deflection - path.open_loop_deflection, 1e-15);
  for (std::size_t i = 1; i < path.waypoints.size(); ++i)
    EXPECT_GT(path.waypoints[i].x_tip, path.waypoints[i - 1].x_tip);
}

TEST(GeneratePath, ReplayReachesTarget) {
  const SimConfig sc;
  const Target t = find_target(9);
  const auto path = generate_path(t, sc);
  SimState s = new_simulation(sc, path.entry_offset);
  insert_straight(s, t.depth);
  EXPECT_NEAR(s.observe().y_tip, t.deflection, 0.5);
  EXPECT_EQ(s.observe(), path.waypoints.back());
}

TEST(GeneratePath, ReportsUnreachableTarget) {
  SimConfig sc;
  sc.bevel_offset = -40.0;
  EXPECT_THROW(generate_path(find_target(9), sc, 1e-9), Error);
}

TEST(Metrics, Examples) {
  RunRecord r;
  r.log.push_back({0, {-170, 1.0, 1.0}, {}, {}, 5.0, 0, 0, 0, 0});
  r.log.push_back({1, {-169, 0.0, 3.0}, {}, {}, 4.0, 0, 0, 0, 0});
  r.log.push_back({2, {-168, 1.5, 2.0}, {}, {}, 1.0, 0, 0, 0, 0});
  r.steps = 2;
  const Target t{99, 40.0, 0, 0};
  const auto m = compute_metrics(r, t);
  EXPECT_DOUBLE_EQ(m.p_template, 5.0);
  EXPECT_DOUBLE_EQ(m.p_base, 2.5);
  EXPECT_EQ(m.final_err, 1.0);
  EXPECT_EQ(m.steps, 2);
}

TEST(Metrics, ZeroLateralMotion) {
  RunRecord r;
  r.log.push_back({0, {-170, 0.3, 0.3}, {}, {}, 0, 0, 0, 0, 0});
  r.log.push_back({1, {-160, 0.3, 0.3}, {}, {}, 0, 0, 0, 0, 0});
  const auto m = compute_metrics(r, find_target(1));
  EXPECT_EQ(m.p_base, 0.0);
  EXPECT_EQ(m.p_template, 0.0);
  EXPECT_THROW(compute_metrics(RunRecord{}, find_target(1)), PreconditionError);
}

TEST(Metrics, ErrorMagnitude) {
  EXPECT_EQ(error_magnitude({3, 4, 0.5}, {0, 0, 0}), 5.0);
}

TEST(StudyMatrix, SeventyTwoCells) {
  const StudyMatrix m;
  const auto cells = m.cells();
  ASSERT_EQ(cells.size(), 72u);
  std::set<std::string> ids;
  for (const auto& c : cells) ids.insert(c.id());
  EXPECT_EQ(ids.size(), 72u);
  EXPECT_EQ(cells.front().id(), "T01_path_data");
  EXPECT_EQ(cells.back().id(), "T09_point_mech_0.5");
  EXPECT_EQ((StudyCell{find_target(9), TaskKind::PathFollowing, Strategy::mechanics(1.5)}).id(),
            "T09_path_mech_1.5");
}

TEST(RunCell, PathFollowingTargetOne) {
  const SimConfig sc;
  const Target t = find_target(1);
  const auto path = generate_path(t, sc);
  for (const auto& s : {Strategy::data_driven(), Strategy::mechanics(1.5), Strategy::mechanics(0.5)}) {
    const auto r = run_cell({t, TaskKind::PathFollowing, s}, path, sc, {});
    EXPECT_EQ(r.record.status, RunStatus::Converged);
    EXPECT_LE(r.metrics.final_err, 0.25);
    EXPECT_LT(r.metrics.p_base, 5.0);
    EXPECT_LT(r.metrics.p_template, 5.0);
    EXPECT_EQ(r.record.log.front().inputs.y_base, path.entry_offset);
  }
}
