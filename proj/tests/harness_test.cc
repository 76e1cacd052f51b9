//
// Copyright 2026 The Diff2 Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "diff2/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "json.hpp"

namespace diff2 {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Fixtures: a small deterministic regression CSV written to the test temp dir.
// The generator is the standard library engine, independent of the library's
// own RNG.
// ---------------------------------------------------------------------------

std::string WriteTempCsv(const std::string& contents) {
  static int counter = 0;
  const fs::path path = fs::path(testing::TempDir()) /
                        ("harness_test_" + std::to_string(counter++) + ".csv");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << contents;
  out.flush();
  EXPECT_TRUE(static_cast<bool>(out));
  return path.string();
}

// 60 rows, 3 features, a smooth nonlinear target.  Small enough that a
// 60-round full-batch run takes milliseconds.
std::string SynthRegressionCsv() {
  std::mt19937 gen(42);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::ostringstream out;
  out << "f0,f1,f2,y\n";
  char line[160];
  for (int i = 0; i < 60; ++i) {
    const double a = unif(gen);
    const double b = unif(gen);
    const double c = unif(gen);
    const double y = std::sin(3.0 * a) + 0.5 * b * c;
    std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%.6f\n", a, b, c, y);
    out << line;
  }
  return out.str();
}

const std::string& SynthCsvPath() {
  static const std::string path = WriteTempCsv(SynthRegressionCsv());
  return path;
}

ExperimentConfig BaseConfig() {
  ExperimentConfig cfg;
  cfg.dataset_path = SynthCsvPath();
  cfg.task = TaskKind::kRegression;
  cfg.budget.eps_dp = 3.0;
  cfg.budget.delta_dp = 1e-5;
  cfg.rounds = 60;
  cfg.clients = 2;
  cfg.seeds = 1;
  cfg.base_seed = 0;
  cfg.tune = false;
  cfg.fast = false;
  cfg.metric_stride = 1;
  cfg.threads = 1;
  return cfg;
}

ExperimentConfig FixedEtaConfig(AlgoKind algo, double eta) {
  ExperimentConfig cfg = BaseConfig();
  cfg.algos = {algo};
  cfg.tune = false;
  cfg.fixed.eta = eta;
  cfg.fixed.c1 = 1.0;
  cfg.fixed.c2 = 1.0;
  cfg.fixed.c3 = 1.0;
  cfg.fixed.restart_interval = 1;
  return cfg;
}

// Student-t CDF with four degrees of freedom has the elementary closed form
//   F(t) = 1/2 + (3/4) u - (1/4) u^3,   u = t / sqrt(t^2 + 4),
// obtained by integrating the density 12 / (t^2 + 4)^(5/2) exactly.
double StudentT4ClosedForm(double t) {
  const double u = t / std::sqrt(t * t + 4.0);
  return 0.5 + 0.75 * u - 0.25 * u * u * u;
}

std::string ReadAll(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(static_cast<bool>(in)) << path;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct ParsedCurve {
  std::vector<int> round;
  std::vector<double> train_loss;
  std::vector<double> sq_grad;
  std::vector<double> test_loss;
};

ParsedCurve ParseCurveCsv(const fs::path& path) {
  std::ifstream in(path);
  EXPECT_TRUE(static_cast<bool>(in)) << path;
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "round,train_loss,train_sq_grad_norm,test_loss");
  ParsedCurve curve;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    curve.round.push_back(std::stoi(cell));
    std::getline(row, cell, ',');
    curve.train_loss.push_back(std::stod(cell));
    std::getline(row, cell, ',');
    curve.sq_grad.push_back(std::stod(cell));
    std::getline(row, cell, ',');
    curve.test_loss.push_back(std::stod(cell));
  }
  return curve;
}

// Minimal XML well-formedness check: every opened element is closed in LIFO
// order.  Declarations (<?...?>) and self-closing elements are skipped.
bool XmlTagsBalanced(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string::npos) {
    const std::size_t end = text.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty() || tag.front() == '?' || tag.front() == '!') continue;
    const bool closing = tag.front() == '/';
    if (closing) tag = tag.substr(1);
    const bool self_closing = !tag.empty() && tag.back() == '/';
    if (self_closing) tag.pop_back();
    const std::size_t name_end = tag.find_first_of(" \t\r\n");
    const std::string name = tag.substr(0, name_end);
    if (name.empty()) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

// ---------------------------------------------------------------------------
// Names and grids.
// ---------------------------------------------------------------------------

TEST(AlgoNameTest, RoundTripsAllKinds) {
  const std::vector<std::pair<AlgoKind, std::string>> expected = {
      {AlgoKind::kGd, "gd"},
      {AlgoKind::kDpGd, "dp-gd"},
      {AlgoKind::kDiff2Gd, "diff2-gd"},
      {AlgoKind::kDiff2BvrLsgd, "diff2-bvr-lsgd"},
  };
  for (const auto& [kind, name] : expected) {
    EXPECT_EQ(AlgoName(kind), name);
    EXPECT_EQ(ParseAlgo(name), kind);
  }
  EXPECT_THROW(ParseAlgo("sgd"), std::invalid_argument);
  EXPECT_THROW(ParseAlgo(""), std::invalid_argument);
}

TEST(TuningGridTest, FullGridContents) {
  const TuningGrid grid = TuningGrid::Full(2000);
  ASSERT_EQ(grid.eta_grid.size(), 10u);
  for (int i = 0; i <= 9; ++i) {
    EXPECT_DOUBLE_EQ(grid.eta_grid[static_cast<std::size_t>(i)],
                     std::pow(0.5, i));
  }
  EXPECT_EQ(grid.radius_grid, (std::vector<double>{1, 3, 10, 30, 100}));
  EXPECT_EQ(grid.restart_grid, (std::vector<int>{6, 20, 60, 200}));
  EXPECT_EQ(TuningGrid::Full(1000).restart_grid,
            (std::vector<int>{3, 10, 30, 100}));
}

TEST(TuningGridTest, RestartFractionsRoundClampAndDeduplicate) {
  // At 10 rounds every fraction rounds to 0 or 1 and is clamped up to 1,
  // leaving a single deduplicated entry.
  EXPECT_EQ(TuningGrid::Full(10).restart_grid, (std::vector<int>{1}));
  // At 60 rounds: 0.18 -> 1 (clamped), 0.6 -> 1, 1.8 -> 2, 6 -> 6.
  EXPECT_EQ(TuningGrid::Full(60).restart_grid, (std::vector<int>{1, 2, 6}));
}

TEST(TuningGridTest, FastGridContents) {
  const TuningGrid grid = TuningGrid::Fast(2000);
  ASSERT_EQ(grid.eta_grid.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(grid.eta_grid[static_cast<std::size_t>(i)],
                     std::pow(0.5, i + 4));
  }
  EXPECT_EQ(grid.radius_grid, (std::vector<double>{1, 30}));
  EXPECT_EQ(grid.restart_grid, (std::vector<int>{6, 20}));
}

TEST(TuningGridTest, SingleGridEchoesTheSetting) {
  HyperParams hp;
  hp.eta = 0.125;
  hp.c1 = 7.0;
  hp.restart_interval = 40;
  const TuningGrid grid = TuningGrid::Single(hp);
  EXPECT_EQ(grid.eta_grid, (std::vector<double>{0.125}));
  EXPECT_EQ(grid.radius_grid, (std::vector<double>{7.0}));
  EXPECT_EQ(grid.restart_grid, (std::vector<int>{40}));
}

// ---------------------------------------------------------------------------
// Patience controller, scripted.
// ---------------------------------------------------------------------------

TEST(PatienceControllerTest, StrikesResetsAndAbandons) {
  PatienceController pc(/*limit=*/3, /*threshold=*/1.05);
  EXPECT_TRUE(pc.Observe(1.0));  // first observation becomes the best
  EXPECT_DOUBLE_EQ(pc.best(), 1.0);
  EXPECT_EQ(pc.count(), 0);

  EXPECT_TRUE(pc.Observe(1.04));  // within tolerance: no strike
  EXPECT_EQ(pc.count(), 0);
  EXPECT_TRUE(pc.Observe(1.05));  // exactly at the boundary: not a strike
  EXPECT_EQ(pc.count(), 0);
  EXPECT_TRUE(pc.Observe(1.051));  // strike 1
  EXPECT_EQ(pc.count(), 1);
  EXPECT_TRUE(pc.Observe(1.2));  // strike 2
  EXPECT_EQ(pc.count(), 2);

  EXPECT_TRUE(pc.Observe(0.9));  // new best resets the counter
  EXPECT_DOUBLE_EQ(pc.best(), 0.9);
  EXPECT_EQ(pc.count(), 0);

  EXPECT_TRUE(pc.Observe(1.2));   // strike 1
  EXPECT_TRUE(pc.Observe(1.2));   // strike 2
  EXPECT_FALSE(pc.Observe(1.2));  // strike 3 reaches the limit
  EXPECT_EQ(pc.count(), 3);
}

TEST(PatienceControllerTest, PlateauNeitherStrikesNorResets) {
  PatienceController pc(2, 1.05);
  EXPECT_TRUE(pc.Observe(1.0));
  EXPECT_TRUE(pc.Observe(1.2));  // strike 1
  EXPECT_EQ(pc.count(), 1);
  EXPECT_TRUE(pc.Observe(1.0));  // equal to best: no reset, no strike
  EXPECT_EQ(pc.count(), 1);
  EXPECT_DOUBLE_EQ(pc.best(), 1.0);
}

TEST(PatienceControllerTest, NonFiniteLossAbandonsImmediately) {
  PatienceController pc(5, 1.05);
  EXPECT_TRUE(pc.Observe(1.0));
  EXPECT_FALSE(pc.Observe(kNan));

  PatienceController pc2(5, 1.05);
  EXPECT_FALSE(pc2.Observe(kInf));
}

TEST(PatienceControllerTest, NonPositiveLimitDisablesAbandonment) {
  PatienceController pc(0, 1.05);
  EXPECT_TRUE(pc.Observe(1.0));
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(pc.Observe(10.0));
  EXPECT_TRUE(pc.Observe(kNan));  // still tracked, never abandons
  EXPECT_GT(pc.count(), 100 - 1);
}

// ---------------------------------------------------------------------------
// Student-t CDF and the paired test.
// ---------------------------------------------------------------------------

TEST(StudentTCdfTest, MatchesClosedFormAtFourDegrees) {
  const std::vector<double> ts = {-8.0, -2.0 * std::sqrt(10.0), -2.132,
                                  -1.0, 0.0,  0.5,
                                  2.0,  6.0};
  for (double t : ts) {
    EXPECT_NEAR(StudentTCdf(t, 4), StudentT4ClosedForm(t), 1e-10) << t;
  }
}

TEST(StudentTCdfTest, MatchesCauchyAtOneDegree) {
  // One degree of freedom is the Cauchy distribution:
  // F(t) = 1/2 + atan(t) / pi.
  for (double t : {-5.0, -1.0, 0.0, 0.3, 2.0}) {
    const double cauchy = 0.5 + std::atan(t) / std::acos(-1.0);
    EXPECT_NEAR(StudentTCdf(t, 1), cauchy, 1e-8) << t;
  }
}

TEST(StudentTCdfTest, SymmetryAndMonotonicity) {
  for (double t : {0.25, 1.0, 3.5}) {
    EXPECT_NEAR(StudentTCdf(t, 5) + StudentTCdf(-t, 5), 1.0, 1e-12);
  }
  EXPECT_LT(StudentTCdf(-1.0, 4), StudentTCdf(0.0, 4));
  EXPECT_LT(StudentTCdf(0.0, 4), StudentTCdf(1.0, 4));
  EXPECT_NEAR(StudentTCdf(0.0, 4), 0.5, 1e-12);
}

TEST(PairedTTestTest, HandWorkedExample) {
  // diffs (-2, -1, -3, -2, -2): mean -2, sample sd sqrt(1/2), so
  // t = -2 / (sqrt(1/2) / sqrt(5)) = -2 sqrt(10), and p is the df = 4 lower
  // tail at that point.
  const TTestResult r = PairedOneSidedTTest({-2, -1, -3, -2, -2});
  EXPECT_NEAR(r.t_stat, -2.0 * std::sqrt(10.0), 1e-12);
  EXPECT_NEAR(r.p_value, StudentT4ClosedForm(-2.0 * std::sqrt(10.0)), 1e-10);
  EXPECT_LT(r.p_value, 0.05);
  EXPECT_GT(r.p_value, 0.0);
}

TEST(PairedTTestTest, NegatingDiffsMirrorsThePValue) {
  const std::vector<double> diffs = {-0.4, 0.1, -0.2, -0.3, 0.05};
  const TTestResult neg = PairedOneSidedTTest(diffs);
  std::vector<double> flipped = diffs;
  for (double& d : flipped) d = -d;
  const TTestResult pos = PairedOneSidedTTest(flipped);
  EXPECT_NEAR(neg.t_stat, -pos.t_stat, 1e-12);
  EXPECT_NEAR(neg.p_value + pos.p_value, 1.0, 1e-10);
}

TEST(PairedTTestTest, DegenerateAndInvalidInputs) {
  const TTestResult all_down = PairedOneSidedTTest({-1.0, -1.0, -1.0});
  EXPECT_TRUE(std::isinf(all_down.t_stat));
  EXPECT_LT(all_down.t_stat, 0.0);
  EXPECT_DOUBLE_EQ(all_down.p_value, 0.0);

  const TTestResult all_up = PairedOneSidedTTest({2.0, 2.0});
  EXPECT_TRUE(std::isinf(all_up.t_stat));
  EXPECT_GT(all_up.t_stat, 0.0);
  EXPECT_DOUBLE_EQ(all_up.p_value, 1.0);

  const TTestResult all_zero = PairedOneSidedTTest({0.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(all_zero.t_stat, 0.0);
  EXPECT_DOUBLE_EQ(all_zero.p_value, 0.5);

  EXPECT_THROW(PairedOneSidedTTest({}), std::invalid_argument);
  EXPECT_THROW(PairedOneSidedTTest({1.0}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Tuning semantics: the search walks eta descending inside each grid point
// and keeps the first learning rate that survives patience.  For the
// noiseless baseline a fixed-mode rerun reproduces every tuned run exactly,
// so the expected winner can be derived independently: replay each
// learning-rate's full curve and apply the patience rule to the strided
// checkpoints.
// ---------------------------------------------------------------------------

struct OracleOutcome {
  bool survives = false;
  double min_train_loss = kInf;
  std::vector<RoundRecord> curve;
};

OracleOutcome ReplayEta(const ExperimentConfig& base, double eta) {
  ExperimentConfig cfg = FixedEtaConfig(AlgoKind::kGd, eta);
  cfg.rounds = base.rounds;
  cfg.metric_stride = base.metric_stride;
  const ExperimentResult result = RunExperiment(cfg);
  OracleOutcome outcome;
  if (!result.summaries.at(0).ok) return outcome;  // diverged: never survives
  outcome.curve = result.summaries.at(0).train_curve;

  PatienceController patience(base.patience_limit, base.patience_threshold);
  outcome.survives = true;
  for (const RoundRecord& rec : outcome.curve) {
    // The final evaluation (round == R) happens after the last update, so a
    // failed check there can no longer stop the run.
    if (rec.round >= base.rounds) break;
    if (rec.round % base.metric_stride != 0) continue;
    if (!patience.Observe(rec.train_loss)) {
      outcome.survives = false;
      break;
    }
  }
  if (outcome.survives) {
    for (const RoundRecord& rec : outcome.curve) {
      outcome.min_train_loss = std::min(outcome.min_train_loss, rec.train_loss);
    }
  }
  return outcome;
}

TEST(TuningTest, PicksTheLargestEtaThatSurvivesPatience) {
  ExperimentConfig cfg = BaseConfig();
  cfg.algos = {AlgoKind::kGd};
  cfg.tune = true;
  cfg.metric_stride = 1;
  cfg.patience_limit = 5;
  cfg.patience_threshold = 1.001;

  // Independent derivation of the expected winner.
  const TuningGrid grid = TuningGrid::Full(cfg.rounds);
  double expected_eta = 0.0;
  OracleOutcome expected;
  int abandoned_before_winner = 0;
  for (double eta : grid.eta_grid) {
    OracleOutcome outcome = ReplayEta(cfg, eta);
    if (outcome.survives) {
      expected_eta = eta;
      expected = std::move(outcome);
      break;
    }
    ++abandoned_before_winner;
  }
  ASSERT_GT(expected_eta, 0.0) << "every replayed learning rate abandoned";
  // The scenario must actually exercise abandonment: the top of the ladder
  // has to fail before a smaller step completes.
  ASSERT_GE(abandoned_before_winner, 1);
  ASSERT_LT(expected_eta, grid.eta_grid.front());

  const ExperimentResult result = RunExperiment(cfg);
  ASSERT_EQ(result.summaries.size(), 1u);
  const RunSummary& run = result.summaries[0];
  ASSERT_TRUE(run.ok) << run.error;
  EXPECT_DOUBLE_EQ(run.chosen_train.eta, expected_eta);
  EXPECT_DOUBLE_EQ(run.min_train_loss, expected.min_train_loss);

  // The tuned winner's curve is bit-identical to the fixed-mode replay: the
  // baseline consumes no randomness, so mode cannot leak into the numbers.
  ASSERT_EQ(run.train_curve.size(), expected.curve.size());
  ASSERT_EQ(run.train_curve.size(),
            static_cast<std::size_t>(cfg.rounds) + 1);
  double min_test = kInf;
  for (std::size_t i = 0; i < run.train_curve.size(); ++i) {
    EXPECT_EQ(run.train_curve[i].round, expected.curve[i].round);
    EXPECT_EQ(run.train_curve[i].train_loss, expected.curve[i].train_loss);
    EXPECT_EQ(run.train_curve[i].train_sq_grad_norm,
              expected.curve[i].train_sq_grad_norm);
    EXPECT_EQ(run.train_curve[i].test_loss, expected.curve[i].test_loss);
    min_test = std::min(min_test, run.train_curve[i].test_loss);
  }
  EXPECT_DOUBLE_EQ(run.min_test_loss, min_test);

  // The baseline logs one model upload and one broadcast per client per
  // round.
  EXPECT_EQ(run.comm_vectors_up, 2L * cfg.rounds);
  EXPECT_EQ(run.comm_vectors_down, 2L * cfg.rounds);
}

TEST(TuningTest, AllAbandonedIsReportedAsACellFailure) {
  // A uselessly small budget makes the injected noise dominate every grid
  // point, so every learning rate is abandoned and the cell fails cleanly.
  ExperimentConfig cfg = BaseConfig();
  cfg.algos = {AlgoKind::kDpGd};
  cfg.budget.eps_dp = 1e-4;
  cfg.rounds = 100;
  cfg.tune = true;
  cfg.metric_stride = 1;
  cfg.patience_limit = 5;
  cfg.patience_threshold = 1.05;

  const ExperimentResult result = RunExperiment(cfg);
  ASSERT_EQ(result.summaries.size(), 1u);
  const RunSummary& run = result.summaries[0];
  EXPECT_FALSE(run.ok);
  EXPECT_NE(run.error.find("abandoned"), std::string::npos) << run.error;
  EXPECT_TRUE(result.comparisons.empty());
}

// ---------------------------------------------------------------------------
// The T = 1 instance of the framework is the classic private baseline: with
// the same fixed setting both algorithms must produce bitwise identical runs.
// ---------------------------------------------------------------------------

TEST(HarnessEquivalenceTest, DpGdIsTheUnitRestartInstance) {
  ExperimentConfig dp = FixedEtaConfig(AlgoKind::kDpGd, 0.125);
  dp.rounds = 25;
  ExperimentConfig unit = FixedEtaConfig(AlgoKind::kDiff2Gd, 0.125);
  unit.rounds = 25;
  unit.fixed.restart_interval = 1;
  unit.u = 1.25;  // must be ignored: a one-round epoch has no second phase

  const ExperimentResult a = RunExperiment(dp);
  const ExperimentResult b = RunExperiment(unit);
  ASSERT_TRUE(a.summaries.at(0).ok) << a.summaries.at(0).error;
  ASSERT_TRUE(b.summaries.at(0).ok) << b.summaries.at(0).error;
  const RunSummary& ra = a.summaries[0];
  const RunSummary& rb = b.summaries[0];

  EXPECT_EQ(ra.min_train_loss, rb.min_train_loss);
  EXPECT_EQ(ra.min_train_sq_grad_norm, rb.min_train_sq_grad_norm);
  EXPECT_EQ(ra.min_test_loss, rb.min_test_loss);
  EXPECT_EQ(ra.comm_vectors_up, rb.comm_vectors_up);
  EXPECT_EQ(ra.comm_vectors_down, rb.comm_vectors_down);
  ASSERT_EQ(ra.train_curve.size(), rb.train_curve.size());
  for (std::size_t i = 0; i < ra.train_curve.size(); ++i) {
    EXPECT_EQ(ra.train_curve[i].round, rb.train_curve[i].round);
    EXPECT_EQ(ra.train_curve[i].train_loss, rb.train_curve[i].train_loss);
    EXPECT_EQ(ra.train_curve[i].train_sq_grad_norm,
              rb.train_curve[i].train_sq_grad_norm);
    EXPECT_EQ(ra.train_curve[i].test_loss, rb.train_curve[i].test_loss);
  }

  // Their calibrations coincide as well: one plan each, same noise.
  ASSERT_EQ(a.plans.size(), 1u);
  ASSERT_EQ(b.plans.size(), 1u);
  EXPECT_EQ(a.plans.begin()->second.sigma1_sq,
            b.plans.begin()->second.sigma1_sq);
}

// ---------------------------------------------------------------------------
// Configuration validation.
// ---------------------------------------------------------------------------

TEST(ConfigValidationTest, RejectsDuplicateAlgorithms) {
  ExperimentConfig cfg = FixedEtaConfig(AlgoKind::kGd, 0.25);
  cfg.algos = {AlgoKind::kGd, AlgoKind::kGd};
  EXPECT_THROW(RunExperiment(cfg), std::invalid_argument);
}

TEST(ConfigValidationTest, RejectsNonPositiveMetricStride) {
  ExperimentConfig cfg = FixedEtaConfig(AlgoKind::kGd, 0.25);
  cfg.metric_stride = 0;
  EXPECT_THROW(RunExperiment(cfg), std::invalid_argument);
}

TEST(ConfigValidationTest, InfeasibleLocalPlanThrows) {
  // 60 rows split 80/20 over two clients leaves 24-sample shards; a batch of
  // 40 cannot be certified (or even drawn), so the plan is rejected up front.
  ExperimentConfig cfg = FixedEtaConfig(AlgoKind::kDiff2BvrLsgd, 0.125);
  cfg.batch = 40;
  cfg.local_steps = 4;
  try {
    RunExperiment(cfg);
    FAIL() << "expected an infeasible-plan error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("infeasible"), std::string::npos)
        << e.what();
  }
}

// ---------------------------------------------------------------------------
// Artifact emission: summary.json schema, curve CSVs, and SVG plots.
// ---------------------------------------------------------------------------

class ArtifactTest : public testing::Test {
 protected:
  static fs::path RunOnce(const std::string& tag, int threads) {
    const fs::path dir = fs::path(testing::TempDir()) / ("harness_" + tag);
    fs::remove_all(dir);
    ExperimentConfig cfg = BaseConfig();
    cfg.algos = {AlgoKind::kGd, AlgoKind::kDpGd};
    cfg.seeds = 2;
    cfg.rounds = 12;
    cfg.metric_stride = 3;
    cfg.tune = false;
    cfg.fixed.eta = 0.25;
    cfg.fixed.c1 = 1.0;
    cfg.fixed.c2 = 1.0;
    cfg.fixed.c3 = 1.0;
    cfg.fixed.restart_interval = 1;
    cfg.threads = threads;
    cfg.out_dir = dir.string();
    RunExperiment(cfg);
    return dir;
  }
};

TEST_F(ArtifactTest, SummaryJsonSchemaAndCurveFiles) {
  const fs::path dir = RunOnce("schema", 1);
  const json doc = json::parse(ReadAll(dir / "summary.json"));

  std::set<std::string> top;
  for (auto it = doc.begin(); it != doc.end(); ++it) top.insert(it.key());
  EXPECT_EQ(top, (std::set<std::string>{"config", "dataset", "noise_plans",
                                        "runs", "comparisons"}));

  const json& cfg = doc.at("config");
  EXPECT_EQ(cfg.at("task"), "regression");
  EXPECT_EQ(cfg.at("algos"), (json::array({"gd", "dp-gd"})));
  EXPECT_DOUBLE_EQ(cfg.at("eps").get<double>(), 3.0);
  EXPECT_DOUBLE_EQ(cfg.at("delta").get<double>(), 1e-5);
  EXPECT_EQ(cfg.at("rounds").get<int>(), 12);
  EXPECT_EQ(cfg.at("clients").get<int>(), 2);
  EXPECT_EQ(cfg.at("seeds").get<int>(), 2);
  EXPECT_FALSE(cfg.at("tune").get<bool>());
  EXPECT_DOUBLE_EQ(cfg.at("fixed").at("eta").get<double>(), 0.25);
  EXPECT_EQ(cfg.at("metric_stride").get<int>(), 3);

  const json& data = doc.at("dataset");
  EXPECT_EQ(data.at("n_train").get<int>(), 48);
  EXPECT_EQ(data.at("n_test").get<int>(), 12);
  EXPECT_EQ(data.at("n_min").get<int>(), 24);
  EXPECT_EQ(data.at("input_dim").get<int>(), 3);
  EXPECT_EQ(data.at("output_dim").get<int>(), 1);

  // Only the private algorithm carries a plan; T = 1 has no second phase.
  const json& plans = doc.at("noise_plans");
  ASSERT_EQ(plans.size(), 1u);
  EXPECT_EQ(plans[0].at("algo"), "dp-gd");
  EXPECT_EQ(plans[0].at("restart_interval").get<int>(), 1);
  EXPECT_GE(plans[0].at("alpha").get<double>(), 2.0);
  EXPECT_GT(plans[0].at("sigma1_sq").get<double>(), 0.0);
  EXPECT_TRUE(plans[0].at("sigma2_sq").is_null());
  EXPECT_TRUE(plans[0].at("sigma3_sq").is_null());
  EXPECT_TRUE(plans[0].at("feasible").get<bool>());
  const json& audit = plans[0].at("audit");
  EXPECT_GT(audit.at("eps_total").get<double>(), 0.0);
  EXPECT_LE(audit.at("eps_total").get<double>(), 3.0 + 1e-12);
  EXPECT_DOUBLE_EQ(audit.at("delta").get<double>(), 1e-5);

  // Runs are algorithm-major, then seed.
  const json& runs = doc.at("runs");
  ASSERT_EQ(runs.size(), 4u);
  const std::vector<std::pair<std::string, int>> order = {
      {"gd", 0}, {"gd", 1}, {"dp-gd", 0}, {"dp-gd", 1}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    EXPECT_EQ(runs[i].at("algo"), order[i].first);
    EXPECT_EQ(runs[i].at("seed").get<int>(), order[i].second);
    ASSERT_TRUE(runs[i].at("ok").get<bool>());
    EXPECT_EQ(runs[i].at("train_curve_csv"),
              CurveCsvName(ParseAlgo(order[i].first), order[i].second));
    // One grid point: both selection criteria name the same run.
    EXPECT_EQ(runs[i].at("grad_curve_csv"), runs[i].at("train_curve_csv"));

    const fs::path csv = dir / runs[i].at("train_curve_csv").get<std::string>();
    ASSERT_TRUE(fs::exists(csv)) << csv;
    const ParsedCurve curve = ParseCurveCsv(csv);
    ASSERT_EQ(curve.round.size(), 13u);
    for (int r = 0; r <= 12; ++r) {
      EXPECT_EQ(curve.round[static_cast<std::size_t>(r)], r);
    }
    double min_train = kInf;
    double min_grad = kInf;
    double min_test = kInf;
    for (std::size_t k = 0; k < curve.round.size(); ++k) {
      ASSERT_TRUE(std::isfinite(curve.train_loss[k]));
      ASSERT_TRUE(std::isfinite(curve.sq_grad[k]));
      ASSERT_TRUE(std::isfinite(curve.test_loss[k]));
      min_train = std::min(min_train, curve.train_loss[k]);
      min_grad = std::min(min_grad, curve.sq_grad[k]);
      min_test = std::min(min_test, curve.test_loss[k]);
    }
    // %.17g round-trips doubles exactly, so the emitted minima must agree
    // bitwise with the minima recomputed from the emitted curves.
    EXPECT_EQ(runs[i].at("min_train_loss").get<double>(), min_train);
    EXPECT_EQ(runs[i].at("min_train_sq_grad_norm").get<double>(), min_grad);
    EXPECT_EQ(runs[i].at("min_test_loss").get<double>(), min_test);
  }

  // One algorithm pair, three metrics, two paired seeds each.
  const json& cmps = doc.at("comparisons");
  ASSERT_EQ(cmps.size(), 3u);
  std::set<std::string> metrics;
  for (const json& cmp : cmps) {
    EXPECT_EQ(cmp.at("algo_a"), "gd");
    EXPECT_EQ(cmp.at("algo_b"), "dp-gd");
    metrics.insert(cmp.at("metric").get<std::string>());
    ASSERT_EQ(cmp.at("diffs").size(), 2u);
    EXPECT_TRUE(cmp.at("p_value").is_number());
  }
  EXPECT_EQ(metrics,
            (std::set<std::string>{"min_train_loss", "min_train_sq_grad_norm",
                                   "min_test_loss"}));
}

TEST_F(ArtifactTest, SvgPlotsAreWellFormed) {
  const fs::path dir = RunOnce("svg", 1);
  for (const char* name : {"plot_train_loss.svg", "plot_train_sq_grad_norm.svg",
                           "plot_test_loss.svg"}) {
    const fs::path path = dir / name;
    ASSERT_TRUE(fs::exists(path)) << path;
    const std::string text = ReadAll(path);
    EXPECT_NE(text.find("<svg"), std::string::npos) << name;
    EXPECT_NE(text.rfind("</svg>"), std::string::npos) << name;
    EXPECT_TRUE(XmlTagsBalanced(text)) << name;
  }
}

TEST_F(ArtifactTest, ArtifactsAreByteDeterministicAcrossThreadCounts) {
  const fs::path serial = RunOnce("serial", 1);
  const fs::path threaded = RunOnce("threaded", 4);
  EXPECT_EQ(ReadAll(serial / "summary.json"), ReadAll(threaded / "summary.json"));
  EXPECT_EQ(ReadAll(serial / "curve_dp-gd_seed1.csv"),
            ReadAll(threaded / "curve_dp-gd_seed1.csv"));
  EXPECT_EQ(ReadAll(serial / "plot_train_loss.svg"),
            ReadAll(threaded / "plot_train_loss.svg"));
}

}  // namespace
}  // namespace diff2
