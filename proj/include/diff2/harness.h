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

#ifndef DIFF2_HARNESS_H_
#define DIFF2_HARNESS_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diff2/data_pipeline.h"
#include "diff2/diff2_core.h"
#include "diff2/federation.h"
#include "diff2/model_zoo.h"
#include "diff2/numerics.h"
#include "diff2/privacy_accountant.h"

namespace diff2 {

// The four optimizers the laboratory runs.
enum class AlgoKind {
  kGd,           // non-private full-batch gradient descent
  kDpGd,         // the T = 1, u -> 1 instance of the framework
  kDiff2Gd,      // gradient-difference method with the one-step routine
  kDiff2BvrLsgd  // gradient-difference method with the local routine
};

std::string AlgoName(AlgoKind algo);      // "gd", "dp-gd", ...
AlgoKind ParseAlgo(const std::string&);   // inverse; throws on unknown names

// One fully specified hyperparameter setting.
struct HyperParams {
  double eta = 0.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 1.0;
  int restart_interval = 1;  // T
};

// Hyperparameter search space.  Enumeration order is the documented
// tie-breaking order: radii ascending (c1 outer, then c2), restart interval
// ascending, and eta descending within a grid point.
struct TuningGrid {
  std::vector<double> eta_grid;     // descending
  std::vector<double> radius_grid;  // ascending; used for each applicable C
  std::vector<int> restart_grid;    // ascending, already clamped to [1, R]

  // Full protocol grids: eta in {0.5^i : i = 0..9}, radii
  // {1, 3, 10, 30, 100}, T in {0.003 R, 0.01 R, 0.03 R, 0.1 R} rounded to
  // integers >= 1, clamped to [1, R], deduplicated.
  static TuningGrid Full(int rounds);
  // Reduced grids for time-boxed suites: eta {0.5^i : i = 4..7}, radii
  // {1, 30}, T in {0.003 R, 0.01 R} (same rounding rules).
  static TuningGrid Fast(int rounds);
  // Degenerate one-point grid: a plain run of the given setting.
  static TuningGrid Single(const HyperParams& hp);
};

// Early-abandon rule for hyperparameter search.  Loss is observed every
// `stride` rounds; the patience counter increments when the current loss
// exceeds threshold * (running minimum), resets to zero when the current
// loss improves on the running minimum, and the run is abandoned when the
// counter reaches the limit or the loss is non-finite.  limit <= 0 disables
// abandonment (observations still tracked).
class PatienceController {
 public:
  PatienceController(int limit, double threshold);

  // Feeds one loss observation; returns false when the run should stop.
  bool Observe(double loss);

  double best() const { return best_; }
  int count() const { return count_; }

 private:
  int limit_;
  double threshold_;
  double best_;
  int count_ = 0;
};

// Student-t CDF with `df` degrees of freedom, computed by adaptive Simpson
// quadrature of the density (absolute error well below 1e-10).  The harness
// always calls it with df = 4 (five seeds, paired differences).
double StudentTCdf(double t, int df);

struct TTestResult {
  double t_stat = 0.0;
  double p_value = 0.5;
};

// Paired one-sided t-test on per-seed differences, alternative "the mean
// difference is negative".  t = mean / (sd / sqrt(n)) with sample sd
// (divisor n - 1); p = StudentTCdf(t, n - 1), the lower tail.  Degenerate
// zero-sd inputs: p = 0 (mean < 0), 1 (mean > 0), or 0.5 (mean = 0).
// Requires n >= 2.
TTestResult PairedOneSidedTTest(const std::vector<double>& diffs);

// One metrics row of a run curve.  wall_time (seconds since the start of the
// run) is kept in memory for diagnostics but never serialized, so emitted
// artifacts stay byte-deterministic.
struct RoundRecord {
  int round = 0;  // iterate index, 0 .. R
  double train_loss = 0.0;
  double train_sq_grad_norm = 0.0;
  double test_loss = 0.0;
  double wall_time = 0.0;
};

// Result of one (algorithm, seed) cell: the tuned winner per selection
// metric and its curves.
struct RunSummary {
  AlgoKind algo = AlgoKind::kGd;
  int seed_index = 0;
  bool ok = false;
  std::string error;  // set when !ok

  // Winner by minimum train loss.  Test-loss reporting reuses this run.
  HyperParams chosen_train;
  // Winner by minimum squared train gradient norm (may be the same point).
  HyperParams chosen_grad;

  double min_train_loss = 0.0;
  double min_train_sq_grad_norm = 0.0;
  double min_test_loss = 0.0;

  std::vector<RoundRecord> train_curve;  // per-round, winner by train loss
  std::vector<RoundRecord> grad_curve;   // per-round, winner by grad norm

  long comm_vectors_up = 0;    // totals of the train-loss winner's run
  long comm_vectors_down = 0;
};

// Experiment configuration (the CLI's run subcommand maps onto this).
struct ExperimentConfig {
  std::string dataset_path;
  TaskKind task = TaskKind::kRegression;
  std::vector<AlgoKind> algos;
  PrivacyBudget budget;  // used by the private algorithms
  int rounds = 2000;     // R
  int clients = 10;      // P
  int seeds = 5;
  std::uint64_t base_seed = 0;

  bool tune = true;
  bool fast = false;       // reduced grids
  HyperParams fixed;       // used when !tune (one-point grid)

  int local_steps = 10;    // K (BVR)
  int batch = 40;          // b (BVR)
  double u = 1.25;         // GD budget split
  double u1 = 3.0;         // BVR budget splits
  double u2 = 3.0;

  int metric_stride = 20;      // patience cadence during tuning
  int patience_limit = 5;      // <= 0 disables abandonment
  double patience_threshold = 1.05;

  int threads = 0;  // worker pool size; 0 = hardware concurrency
  std::string out_dir;  // empty = do not write files
};

// A paired comparison between two configured algorithms on one metric.
struct PairedComparison {
  AlgoKind algo_a = AlgoKind::kGd;
  AlgoKind algo_b = AlgoKind::kGd;
  std::string metric;          // "min_train_loss", ...
  std::vector<double> diffs;   // per seed: metric(a) - metric(b)
  TTestResult test;
};

struct ExperimentResult {
  ExperimentConfig config;
  // Noise plans per private algorithm, one per distinct restart interval in
  // the grid, keyed by (algo, T).
  std::map<std::pair<AlgoKind, int>, NoisePlan> plans;
  std::vector<RunSummary> summaries;  // algo-major, then seed
  std::vector<PairedComparison> comparisons;
  int n_train = 0;
  int n_test = 0;
  int n_min = 0;
  int input_dim = 0;   // after dropped features
  int output_dim = 0;
};

// Runs the full protocol: load, per-seed split/normalize/partition/init,
// per-(algo, seed) hyperparameter search with patience, paired t-tests over
// seeds, and (when out_dir is set) artifact emission.  Seeds and grid cells
// are deterministic given base_seed regardless of thread count.  Throws on
// infeasible noise plans, unusable datasets, or I/O failure; per-seed run
// failures are recorded in their summaries without aborting other seeds.
ExperimentResult RunExperiment(const ExperimentConfig& config);

// Writes curve CSVs, summary.json, and the three per-metric SVG plots into
// result.config.out_dir (which must exist or be creatable).  Called by
// RunExperiment when out_dir is nonempty; exposed for tests.
void EmitOutputs(const ExperimentResult& result);

// The curve CSV path used by EmitOutputs for a given cell's train-loss
// winner, relative to out_dir.
std::string CurveCsvName(AlgoKind algo, int seed_index);

}  // namespace diff2

#endif  // DIFF2_HARNESS_H_
