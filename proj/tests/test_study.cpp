#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <sstream>

#include "needlesim/config.hpp"
#include "needlesim/study.hpp"

using namespace needlesim;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

StudyMatrix small_matrix() {
  ExperimentConfig e;
  e.targets = {1, 2};
  return study_matrix(e);
}

}  // namespace

TEST(Spearman, MatchesReferenceValues) {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 1, 4, 3, 5};
  EXPECT_NEAR(spearman(a, b), 0.8, 1e-12);
  const std::vector<double> c{1, 2, 2, 3}, d{1, 3, 2, 4};
  EXPECT_NEAR(spearman(c, d), 0.9486832980505139, 1e-12);
  const std::vector<double> e{30.62, 33.02, 35.42, 40.22, 40.22, 45.02}, f{6.0, 5.5, 7.1, 7.1, 9.0, 8.0};
  EXPECT_NEAR(spearman(e, f), 0.8088235294117647, 1e-12);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), PreconditionError);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw std::runtime_error("x"); }),
               std::runtime_error);
}

TEST(WorkerCount, ReadsEnvironment) {
  ::setenv(kWorkersEnv, "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  ::setenv(kWorkersEnv, "0", 1);
  EXPECT_THROW(worker_count(), ConfigError);
  ::setenv(kWorkersEnv, "many", 1);
  EXPECT_THROW(worker_count(), ConfigError);
  ::unsetenv(kWorkersEnv);
  EXPECT_GE(worker_count(), 1u);
}

TEST(Csv, SimulationHeaderOnly) {
  std::ostringstream out;
  write_simulation_csv(out, {});
  EXPECT_EQ(out.str(), "step,x_base,y_base,y_template,x_tip,y_tip,k_tip,n_contacts,newton_iters\n");
}

TEST(Csv, FormatsNumbersExactly) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(format_number(1e-17), "1e-17");
  EXPECT_EQ(parse_number(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Study, SummaryIsDeterministicAcrossWorkerCounts) {
  const StudyMatrix m = small_matrix();
  const SimConfig sc;
  const ControllerConfig cc;
  const auto one = run_study(m, sc, cc, 1);
  const auto many = run_study(m, sc, cc, 3);
  std::ostringstream a, b;
  write_summary_csv(a, one.cells);
  write_summary_csv(b, many.cells);
  EXPECT_EQ(a.str(), b.str());
  const auto rows = lines(a.str());
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_EQ(rows[0], "target,task,strategy,scale,P_base,P_template,err,steps,status");
  EXPECT_EQ(rows[1].substr(0, 13), "1,path,data,,");
  EXPECT_EQ(a.str().find('\r'), std::string::npos);
  for (const auto& r : one.cells) EXPECT_TRUE(succeeded(r, 0.25)) << r.cell.id();
}

TEST(Study, MetricsRecomputeFromRunCsv) {
  const StudyMatrix m = small_matrix();
  const auto result = run_study(m, {}, {}, 2);
  for (const auto& r : result.cells) {
    std::ostringstream out;
    write_run_csv(out, r.record);
    const auto rows = lines(out.str());
    ASSERT_EQ(rows.size(), r.record.log.size() + 1);
    double b0 = 0, t0 = 0, base = 0, tmpl = 0, err = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto f = split_list(rows[i]);
      ASSERT_EQ(f.size(), 15u);
      const double yb = parse_number(f[2]), yt = parse_number(f[3]);
      if (i == 1) b0 = yb, t0 = yt;
      base = std::max(base, std::abs(yb - b0));
      tmpl = std::max(tmpl, std::abs(yt - t0));
      err = parse_number(f[12]);
    }
    EXPECT_EQ(100.0 * base / r.cell.target.depth, r.metrics.p_base) << r.cell.id();
    EXPECT_EQ(100.0 * tmpl / r.cell.target.depth, r.metrics.p_template) << r.cell.id();
    EXPECT_EQ(err, r.metrics.final_err);
  }
}

TEST(Study, ChecksOnSmallMatrix) {
  const StudyMatrix m = small_matrix();
  const auto result = run_study(m, {}, {}, 2);
  EXPECT_EQ(check_targeting(result.cells).level, CheckLevel::Pass);
  EXPECT_EQ(check_path_effort(result.cells).level, CheckLevel::Pass);
  EXPECT_EQ(check_task_ordering(result.cells, m).level, CheckLevel::Pass);
}

TEST(Study, FailedCellsAreRecorded) {
  StudyMatrix m = small_matrix();
  m.targets.resize(1);
  ControllerConfig cc;
  cc.max_steps = 2;
  const auto result = run_study(m, {}, cc, 2);
  const auto check = check_targeting(result.cells);
  EXPECT_EQ(check.level, CheckLevel::Fail);
  EXPECT_NE(check.detail.find("T01_path_data"), std::string::npos);
}

TEST(Study, PathEffortLevels) {
  CellResult r;
  r.cell.task = TaskKind::PathFollowing;
  r.record.log.resize(1);
  r.metrics.p_base = 6.0;
  std::vector<CellResult> cells{r};
  EXPECT_EQ(check_path_effort(cells).level, CheckLevel::Warn);
  cells[0].metrics.p_base = 9.0;
  EXPECT_EQ(check_path_effort(cells).level, CheckLevel::Fail);
  cells[0].metrics.p_base = 1.0;
  EXPECT_EQ(check_path_effort(cells).level, CheckLevel::Pass);
}
