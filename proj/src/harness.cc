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
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

namespace diff2 {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string AlgoName(AlgoKind algo) {
  switch (algo) {
    case AlgoKind::kGd:
      return "gd";
    case AlgoKind::kDpGd:
      return "dp-gd";
    case AlgoKind::kDiff2Gd:
      return "diff2-gd";
    case AlgoKind::kDiff2BvrLsgd:
      return "diff2-bvr-lsgd";
  }
  throw std::invalid_argument("unknown AlgoKind");
}

AlgoKind ParseAlgo(const std::string& name) {
  if (name == "gd") return AlgoKind::kGd;
  if (name == "dp-gd") return AlgoKind::kDpGd;
  if (name == "diff2-gd") return AlgoKind::kDiff2Gd;
  if (name == "diff2-bvr-lsgd") return AlgoKind::kDiff2BvrLsgd;
  throw std::invalid_argument("unknown algorithm name: " + name);
}

namespace {

// Restart intervals f * R rounded to the nearest integer, clamped to [1, R],
// sorted ascending and deduplicated.
std::vector<int> RestartGridFromFractions(const std::vector<double>& fractions,
                                          int rounds) {
  std::vector<int> grid;
  for (double f : fractions) {
    int t = static_cast<int>(std::llround(f * rounds));
    t = std::max(1, std::min(rounds, t));
    grid.push_back(t);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

}  // namespace

TuningGrid TuningGrid::Full(int rounds) {
  TuningGrid grid;
  for (int i = 0; i <= 9; ++i) grid.eta_grid.push_back(std::pow(0.5, i));
  grid.radius_grid = {1.0, 3.0, 10.0, 30.0, 100.0};
  grid.restart_grid =
      RestartGridFromFractions({0.003, 0.01, 0.03, 0.1}, rounds);
  return grid;
}

TuningGrid TuningGrid::Fast(int rounds) {
  TuningGrid grid;
  // The reduced ladder keeps the small-step half of the full grid: with
  // patience-based abandonment, larger steps on the reference dataset are
  // always rejected, so spending the budget there would be wasted.  The two
  // radii stay small because large radii inject noise whose standard
  // deviation rivals the per-round progress, which makes runs flaky under
  // patience; the two shortest restart fractions keep the estimator fresh,
  // which is where the gradient-difference methods do best.
  for (int i = 4; i <= 7; ++i) grid.eta_grid.push_back(std::pow(0.5, i));
  grid.radius_grid = {1.0, 10.0};
  grid.restart_grid = RestartGridFromFractions({0.003, 0.01}, rounds);
  return grid;
}

TuningGrid TuningGrid::Single(const HyperParams& hp) {
  TuningGrid grid;
  grid.eta_grid = {hp.eta};
  grid.radius_grid = {hp.c1};
  grid.restart_grid = {hp.restart_interval};
  return grid;
}

PatienceController::PatienceController(int limit, double threshold)
    : limit_(limit),
      threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {}

bool PatienceController::Observe(double loss) {
  if (std::isfinite(loss)) {
    if (loss < best_) {
      best_ = loss;
      count_ = 0;
    } else if (loss > threshold_ * best_) {
      ++count_;
    }
  } else {
    // A non-finite loss fails the check outright (when abandonment is on).
    ++count_;
    if (limit_ > 0) return false;
  }
  return limit_ <= 0 || count_ < limit_;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// Student-t density with nu degrees of freedom.
double TDensity(double x, int df) {
  const double nu = df;
  const double log_norm = std::lgamma(0.5 * (nu + 1.0)) -
                          std::lgamma(0.5 * nu) - 0.5 * std::log(nu * kPi);
  return std::exp(log_norm - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
}

// Textbook adaptive Simpson recursion with an absolute-error budget.
template <typename F>
double AdaptiveSimpson(const F& f, double a, double b, double fa, double fm,
                       double fb, double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * eps) {
    return left + right + delta / 15.0;
  }
  return AdaptiveSimpson(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
         AdaptiveSimpson(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
}

template <typename F>
double Integrate(const F& f, double a, double b, double eps) {
  if (!(b > a)) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return AdaptiveSimpson(f, a, b, fa, fm, fb, whole, eps, 48);
}

}  // namespace

double StudentTCdf(double t, int df) {
  if (df < 1) throw std::invalid_argument("degrees of freedom must be >= 1");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (t < 0.0) return 1.0 - StudentTCdf(-t, df);

  // CDF(t) = 1/2 + integral of the density over [0, t].  The head is
  // integrated directly; for large t the tail is integrated after the
  // substitution x = 1/y, whose integrand density(1/y)/y^2 ~ y^(df-1) is
  // smooth on [1/t, 1/head] even as t -> infinity.
  const double head = 64.0;
  const auto density = [df](double x) { return TDensity(x, df); };
  const double eps = 5e-14;
  double integral;
  if (t <= head) {
    integral = Integrate(density, 0.0, t, eps);
  } else {
    const auto tail = [df](double y) {
      const double x = 1.0 / y;
      return TDensity(x, df) * x * x;
    };
    const double lower = std::isinf(t) ? 0.0 : 1.0 / t;
    integral = Integrate(density, 0.0, head, eps) +
               Integrate(tail, lower, 1.0 / head, eps);
  }
  return std::min(1.0, 0.5 + integral);
}

TTestResult PairedOneSidedTTest(const std::vector<double>& diffs) {
  const int n = static_cast<int>(diffs.size());
  if (n < 2) {
    throw std::invalid_argument(
        "paired t-test requires at least two differences");
  }
  const double mean =
      std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult result;
  if (sd == 0.0) {
    // All differences identical: the statistic degenerates; the lower-tail
    // p-value is decided by the sign of the common difference.
    if (mean < 0.0) {
      result.t_stat = -kInf;
      result.p_value = 0.0;
    } else if (mean > 0.0) {
      result.t_stat = kInf;
      result.p_value = 1.0;
    } else {
      result.t_stat = 0.0;
      result.p_value = 0.5;
    }
    return result;
  }
  result.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
  result.p_value = StudentTCdf(result.t_stat, n - 1);
  return result;
}

namespace {

// One cell of the hyperparameter search: every radius/restart combination an
// algorithm tunes over.  eta is enumerated separately (descending) inside
// each point.
struct GridPoint {
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 1.0;
  int restart_interval = 1;
};

bool UsesRestartInterval(AlgoKind algo) {
  return algo == AlgoKind::kDiff2Gd || algo == AlgoKind::kDiff2BvrLsgd;
}

// Documented tie-breaking order: radii ascending (C1 outer, then C2), restart
// interval ascending.  The plain baseline tunes eta only; the T = 1 baseline
// tunes C1 only; the gradient-difference methods tune C1 x C2 x T with the
// local radius coefficient tied to C2 (the theory sets both difference
// coefficients to the same smoothness-tracking scale).
std::vector<GridPoint> EnumerateGridPoints(AlgoKind algo,
                                           const TuningGrid& grid) {
  std::vector<GridPoint> points;
  switch (algo) {
    case AlgoKind::kGd:
      points.push_back(GridPoint{});
      break;
    case AlgoKind::kDpGd:
      for (double c1 : grid.radius_grid) {
        points.push_back(GridPoint{c1, 1.0, 1.0, 1});
      }
      break;
    case AlgoKind::kDiff2Gd:
    case AlgoKind::kDiff2BvrLsgd:
      for (double c1 : grid.radius_grid) {
        for (double c2 : grid.radius_grid) {
          for (int t : grid.restart_grid) {
            points.push_back(GridPoint{c1, c2, c2, t});
          }
        }
      }
      break;
  }
  return points;
}

// Outcome of one (grid point, eta) run.
struct SettingResult {
  HyperParams hp;
  bool completed = false;
  double min_train_loss = kInf;
  double min_sq_grad_norm = kInf;
  RunOutput run;
  std::vector<RoundRecord> curve;
};

SettingResult RunOneSetting(const ExperimentConfig& cfg, AlgoKind algo,
                            const NoisePlan* plan, const GridPoint& pt,
                            double eta, const ModelSpec& spec,
                            const Federation& fed, const ParamVector& params0,
                            const RngStream& run_stream, bool patience_on) {
  SettingResult result;
  result.hp.eta = eta;
  result.hp.c1 = pt.c1;
  result.hp.c2 = pt.c2;
  result.hp.c3 = pt.c3;
  result.hp.restart_interval = pt.restart_interval;

  PatienceController patience(patience_on ? cfg.patience_limit : 0,
                              cfg.patience_threshold);
  const int stride = std::max(1, cfg.metric_stride);
  const auto start = std::chrono::steady_clock::now();
  result.curve.reserve(static_cast<std::size_t>(cfg.rounds) + 1);
  const RoundPassObserver observer = [&](int x_index, double train_loss,
                                         double sq_grad_norm) {
    RoundRecord rec;
    rec.round = x_index;
    rec.train_loss = train_loss;
    rec.train_sq_grad_norm = sq_grad_norm;
    rec.wall_time = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    result.curve.push_back(rec);
    if (x_index % stride == 0) return patience.Observe(train_loss);
    return true;
  };

  if (algo == AlgoKind::kGd) {
    result.run =
        RunPlainGd(fed, spec, params0, eta, cfg.rounds, run_stream, observer);
  } else {
    Diff2Config dc;
    dc.restart_interval = pt.restart_interval;
    dc.rounds = cfg.rounds;
    dc.eta = eta;
    dc.c1 = pt.c1;
    dc.c2 = pt.c2;
    dc.c3 = pt.c3;
    dc.sigma1 = std::sqrt(plan->sigma1_sq);
    dc.sigma2 = plan->has_sigma2 ? std::sqrt(plan->sigma2_sq) : 0.0;
    dc.sigma3 = plan->has_sigma3 ? std::sqrt(plan->sigma3_sq) : 0.0;
    if (algo == AlgoKind::kDiff2BvrLsgd) {
      dc.routine = RoutineKind::kBvrLsgd;
      dc.local_steps = cfg.local_steps;
      dc.batch = cfg.batch;
    } else {
      dc.routine = RoutineKind::kGd;
    }
    result.run = RunDiff2(dc, fed, spec, params0, run_stream, observer);
  }

  result.completed = !result.run.aborted && !result.run.diverged;
  if (result.completed) {
    for (const RoundRecord& rec : result.curve) {
      result.min_train_loss = std::min(result.min_train_loss, rec.train_loss);
      result.min_sq_grad_norm =
          std::min(result.min_sq_grad_norm, rec.train_sq_grad_norm);
    }
  }
  return result;
}

// Fills the test-loss column of a completed run's curve by evaluating the
// mean test loss at every recorded iterate.  An empty test set leaves the
// column at zero.
void FillTestLoss(const ModelSpec& spec, const std::vector<Sample>& test,
                  SettingResult* result) {
  if (test.empty()) return;
  for (RoundRecord& rec : result->curve) {
    rec.test_loss = BatchMeanLoss(
        spec, result->run.trajectory[static_cast<std::size_t>(rec.round)],
        test);
  }
}

RunSummary TuneCell(const ExperimentConfig& cfg,
                    const std::map<std::pair<AlgoKind, int>, NoisePlan>& plans,
                    const RawDataset& raw, int output_dim, AlgoKind algo,
                    int seed_index) {
  RunSummary summary;
  summary.algo = algo;
  summary.seed_index = seed_index;

  // Per-seed data preparation.  The derivation labels are shared across
  // algorithms so every algorithm under the same seed sees the identical
  // split, partition, and initialization — that is what makes the per-seed
  // comparisons paired.
  const RngStream seed_root =
      RngStream(cfg.base_seed).Derive("seed", static_cast<uint64_t>(seed_index));
  RngStream split_stream = seed_root.Derive("split", 0);
  auto split = TrainTestSplit(raw, 0.8, split_stream);
  std::vector<Sample> train = std::move(split.first);
  std::vector<Sample> test = std::move(split.second);
  const NormalizationStats stats =
      FitAndApplyNormalization(&train, &test, cfg.task);

  ModelSpec spec;
  spec.input_dim = static_cast<int>(stats.kept_features.size());
  spec.hidden_units = 10;
  spec.output_dim = output_dim;
  spec.loss = cfg.task == TaskKind::kClassification ? LossKind::kCrossEntropy
                                                    : LossKind::kSquared;

  RngStream partition_stream = seed_root.Derive("partition", 0);
  const Federation fed = PartitionIid(train, cfg.clients, partition_stream);
  RngStream init_stream = seed_root.Derive("init", 0);
  const ParamVector params0 = InitParams(spec, init_stream);

  // The search space: either the protocol grids or the single fixed setting.
  std::vector<GridPoint> points;
  std::vector<double> etas;
  if (cfg.tune) {
    const TuningGrid grid =
        cfg.fast ? TuningGrid::Fast(cfg.rounds) : TuningGrid::Full(cfg.rounds);
    points = EnumerateGridPoints(algo, grid);
    etas = grid.eta_grid;
  } else {
    GridPoint pt;
    pt.c1 = cfg.fixed.c1;
    pt.c2 = cfg.fixed.c2;
    pt.c3 = cfg.fixed.c3;
    pt.restart_interval =
        UsesRestartInterval(algo) ? cfg.fixed.restart_interval : 1;
    points = {pt};
    etas = {cfg.fixed.eta};
  }
  const bool patience_on = cfg.tune && cfg.patience_limit > 0;

  // Champions per selection criterion.  Strict comparison keeps the earliest
  // grid point on ties, which is the documented tie-breaking rule.
  std::shared_ptr<SettingResult> best_train;
  std::shared_ptr<SettingResult> best_grad;
  std::shared_ptr<SettingResult> last_failed;
  const RngStream tune_root = seed_root.Derive("run", 0);
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const GridPoint& pt = points[pi];
    const NoisePlan* plan = nullptr;
    if (algo != AlgoKind::kGd) {
      const auto it = plans.find({algo, pt.restart_interval});
      if (it == plans.end()) {
        throw std::logic_error("missing noise plan for " + AlgoName(algo) +
                               " at restart interval " +
                               std::to_string(pt.restart_interval));
      }
      plan = &it->second;
    }
    for (std::size_t ei = 0; ei < etas.size(); ++ei) {
      const RngStream run_stream = tune_root.Derive("grid", pi).Derive("eta", ei);
      auto result = std::make_shared<SettingResult>(
          RunOneSetting(cfg, algo, plan, pt, etas[ei], spec, fed, params0,
                        run_stream, patience_on));
      if (std::getenv("DIFF2_TUNE_DEBUG") != nullptr) {
        std::fprintf(stderr,
                     "tunedbg algo=%s seed=%d pt=(%g,%g,%d) eta=%g %s "
                     "min=%.8g rows=%zu\n",
                     AlgoName(algo).c_str(), seed_index, pt.c1, pt.c2,
                     pt.restart_interval, etas[ei],
                     result->completed ? "completed" : "abandoned",
                     result->min_train_loss, result->curve.size());
      }
      if (!result->completed) {
        last_failed = std::move(result);
        continue;
      }
      if (!best_train || result->min_train_loss < best_train->min_train_loss) {
        best_train = result;
      }
      if (!best_grad || result->min_sq_grad_norm < best_grad->min_sq_grad_norm) {
        best_grad = result;
      }
      break;  // First eta to complete all rounds ends this point's eta search.
    }
  }

  if (!best_train) {
    summary.ok = false;
    if (cfg.tune) {
      summary.error =
          "hyperparameter search failed: every learning rate was abandoned "
          "for every grid point";
    } else if (last_failed && last_failed->run.diverged) {
      summary.error = "run diverged at round " +
                      std::to_string(last_failed->run.diverged_round);
    } else {
      summary.error = "run was stopped before completing";
    }
    return summary;
  }

  FillTestLoss(spec, test, best_train.get());
  if (best_grad != best_train) FillTestLoss(spec, test, best_grad.get());

  summary.ok = true;
  summary.chosen_train = best_train->hp;
  summary.chosen_grad = best_grad->hp;
  summary.min_train_loss = best_train->min_train_loss;
  summary.min_train_sq_grad_norm = best_grad->min_sq_grad_norm;
  summary.min_test_loss = 0.0;
  if (!test.empty()) {
    double best = kInf;
    for (const RoundRecord& rec : best_train->curve) {
      best = std::min(best, rec.test_loss);
    }
    summary.min_test_loss = best;
  }
  summary.comm_vectors_up = best_train->run.comm.TotalUp();
  summary.comm_vectors_down = best_train->run.comm.TotalDown();
  if (best_grad == best_train) {
    summary.grad_curve = best_train->curve;
    summary.train_curve = std::move(best_train->curve);
  } else {
    summary.train_curve = std::move(best_train->curve);
    summary.grad_curve = std::move(best_grad->curve);
  }
  return summary;
}

void ValidateExperimentConfig(const ExperimentConfig& config) {
  if (config.dataset_path.empty()) {
    throw std::invalid_argument("dataset path must be set");
  }
  if (config.algos.empty()) {
    throw std::invalid_argument("at least one algorithm must be selected");
  }
  for (std::size_t i = 0; i < config.algos.size(); ++i) {
    for (std::size_t j = i + 1; j < config.algos.size(); ++j) {
      if (config.algos[i] == config.algos[j]) {
        throw std::invalid_argument("duplicate algorithm: " +
                                    AlgoName(config.algos[i]));
      }
    }
  }
  if (config.rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (config.clients < 1) throw std::invalid_argument("clients must be >= 1");
  if (config.seeds < 1) throw std::invalid_argument("seeds must be >= 1");
  if (config.metric_stride < 1) {
    throw std::invalid_argument("metric stride must be >= 1");
  }
  if (!(config.patience_threshold > 0.0)) {
    throw std::invalid_argument("patience threshold must be > 0");
  }
  if (!config.tune) {
    if (!(config.fixed.eta > 0.0)) {
      throw std::invalid_argument("fixed eta must be > 0");
    }
    if (!(config.fixed.c1 > 0.0 && config.fixed.c2 > 0.0 &&
          config.fixed.c3 > 0.0)) {
      throw std::invalid_argument("fixed clipping radii must be > 0");
    }
    if (config.fixed.restart_interval < 1 ||
        config.fixed.restart_interval > config.rounds) {
      throw std::invalid_argument("fixed restart interval must lie in [1, R]");
    }
  }
  if (config.local_steps < 1) {
    throw std::invalid_argument("local steps must be >= 1");
  }
  if (config.batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (config.threads < 0) throw std::invalid_argument("threads must be >= 0");
}

// Restart intervals whose noise plans an algorithm needs under this config.
std::vector<int> NeededRestartIntervals(const ExperimentConfig& config,
                                        AlgoKind algo) {
  if (algo == AlgoKind::kGd) return {};
  if (algo == AlgoKind::kDpGd) return {1};
  if (!config.tune) return {config.fixed.restart_interval};
  const TuningGrid grid = config.fast ? TuningGrid::Fast(config.rounds)
                                      : TuningGrid::Full(config.rounds);
  return grid.restart_grid;
}

double MetricValue(const RunSummary& summary, const std::string& metric) {
  if (metric == "min_train_loss") return summary.min_train_loss;
  if (metric == "min_train_sq_grad_norm") return summary.min_train_sq_grad_norm;
  if (metric == "min_test_loss") return summary.min_test_loss;
  throw std::invalid_argument("unknown comparison metric: " + metric);
}

}  // namespace

ExperimentResult RunExperiment(const ExperimentConfig& config) {
  ValidateExperimentConfig(config);

  ExperimentResult result;
  result.config = config;

  const RawDataset raw = LoadCsv(config.dataset_path, config.task);
  const int n = static_cast<int>(raw.samples.size());
  if (n < 2) throw std::invalid_argument("dataset has fewer than two rows");

  // Deterministic split/partition sizes: the split keeps ceil(0.8 n) records
  // for training and the balanced partition leaves floor(n_train / P) on the
  // smallest shard, independent of the shuffle stream.
  result.n_train = static_cast<int>(std::ceil(0.8 * n));
  result.n_test = n - result.n_train;
  result.n_min = result.n_train / config.clients;
  if (result.n_min < 1) {
    throw std::invalid_argument(
        "dataset too small: some client shard would be empty");
  }
  {
    // Input width after normalization (zero-variance columns are dropped);
    // taken from the first seed's split, which all reporting refers to.
    const RngStream seed_root = RngStream(config.base_seed).Derive("seed", 0);
    RngStream split_stream = seed_root.Derive("split", 0);
    auto split = TrainTestSplit(raw, 0.8, split_stream);
    const NormalizationStats stats =
        FitAndApplyNormalization(&split.first, &split.second, config.task);
    result.input_dim = static_cast<int>(stats.kept_features.size());
  }
  result.output_dim = 1;
  if (config.task == TaskKind::kClassification) {
    double max_label = 0.0;
    for (const Sample& sample : raw.samples) {
      max_label = std::max(max_label, sample.target);
    }
    result.output_dim =
        std::max(2, static_cast<int>(std::llround(max_label)) + 1);
  }

  // Calibrate (and independently audit) one noise plan per private algorithm
  // and restart interval before any optimization starts.
  for (AlgoKind algo : config.algos) {
    for (int t : NeededRestartIntervals(config, algo)) {
      const auto key = std::make_pair(algo, t);
      if (result.plans.count(key) != 0) continue;
      NoisePlan plan;
      if (algo == AlgoKind::kDpGd) {
        plan = CalibrateDiff2Gd(config.budget, config.rounds, 1, result.n_min,
                                config.clients, 1.0, /*limit_one_u=*/true);
      } else if (algo == AlgoKind::kDiff2Gd) {
        plan = CalibrateDiff2Gd(config.budget, config.rounds, t, result.n_min,
                                config.clients, config.u);
      } else {
        plan = CalibrateDiff2BvrLsgd(config.budget, config.rounds, t,
                                     config.local_steps, config.clients,
                                     result.n_min, config.batch, config.u1,
                                     config.u2);
      }
      if (!plan.feasible) {
        throw std::runtime_error("infeasible noise plan for " +
                                 AlgoName(algo) + " at restart interval " +
                                 std::to_string(t) + ": " + plan.reason);
      }
      const BudgetAudit audit = VerifyBudget(plan, ScheduleFromPlan(plan));
      if (!(audit.eps_total <= config.budget.eps_dp * (1.0 + 1e-9))) {
        throw std::logic_error(
            "privacy audit exceeded the budget for " + AlgoName(algo) +
            " at restart interval " + std::to_string(t) +
            ": total=" + std::to_string(audit.eps_total));
      }
      result.plans.emplace(key, plan);
    }
  }

  // One independent job per (algorithm, seed) cell, algorithm-major.  Cells
  // write disjoint slots, so no further synchronization is needed and the
  // result is identical for any worker count.
  const int total = static_cast<int>(config.algos.size()) * config.seeds;
  result.summaries.assign(static_cast<std::size_t>(total), RunSummary{});
  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (;;) {
      const int index = next.fetch_add(1);
      if (index >= total) return;
      const AlgoKind algo =
          config.algos[static_cast<std::size_t>(index / config.seeds)];
      const int seed = index % config.seeds;
      RunSummary summary;
      try {
        summary = TuneCell(config, result.plans, raw, result.output_dim, algo,
                           seed);
      } catch (const std::exception& e) {
        summary = RunSummary{};
        summary.algo = algo;
        summary.seed_index = seed;
        summary.ok = false;
        summary.error = e.what();
      }
      result.summaries[static_cast<std::size_t>(index)] = std::move(summary);
    }
  };
  int workers = config.threads > 0
                    ? config.threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, total));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  // Paired one-sided comparisons for every algorithm pair (in configured
  // order) and selection metric, over the seeds where both cells succeeded.
  const std::vector<std::string> metrics = {
      "min_train_loss", "min_train_sq_grad_norm", "min_test_loss"};
  const auto summary_at = [&](std::size_t algo_index, int seed) -> const RunSummary& {
    return result.summaries[algo_index * static_cast<std::size_t>(config.seeds) +
                            static_cast<std::size_t>(seed)];
  };
  for (std::size_t i = 0; i < config.algos.size(); ++i) {
    for (std::size_t j = i + 1; j < config.algos.size(); ++j) {
      for (const std::string& metric : metrics) {
        PairedComparison cmp;
        cmp.algo_a = config.algos[i];
        cmp.algo_b = config.algos[j];
        cmp.metric = metric;
        for (int seed = 0; seed < config.seeds; ++seed) {
          const RunSummary& a = summary_at(i, seed);
          const RunSummary& b = summary_at(j, seed);
          if (a.ok && b.ok) {
            cmp.diffs.push_back(MetricValue(a, metric) -
                                MetricValue(b, metric));
          }
        }
        if (cmp.diffs.size() >= 2) {
          cmp.test = PairedOneSidedTTest(cmp.diffs);
        }
        result.comparisons.push_back(std::move(cmp));
      }
    }
  }

  if (!config.out_dir.empty()) EmitOutputs(result);
  return result;
}

namespace {

bool SameHyperParams(const HyperParams& a, const HyperParams& b) {
  return a.eta == b.eta && a.c1 == b.c1 && a.c2 == b.c2 && a.c3 == b.c3 &&
         a.restart_interval == b.restart_interval;
}

bool GradWinnerDiffers(const RunSummary& summary) {
  return !SameHyperParams(summary.chosen_train, summary.chosen_grad);
}

std::string GradCurveCsvName(AlgoKind algo, int seed_index) {
  return "curve_" + AlgoName(algo) + "_seed" + std::to_string(seed_index) +
         "_gradnorm.csv";
}

void WriteCurveCsv(const fs::path& path,
                   const std::vector<RoundRecord>& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "round,train_loss,train_sq_grad_norm,test_loss\n";
  char line[160];
  for (const RoundRecord& rec : curve) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", rec.round,
                  rec.train_loss, rec.train_sq_grad_norm, rec.test_loss);
    out << line;
  }
  out.flush();
  if (!out) {
    throw std::runtime_error("failed while writing " + path.string());
  }
}

// JSON-safe number: non-finite doubles become their string names so the
// document stays valid JSON (nlohmann would emit null otherwise).
Json JsonNumber(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

Json HyperParamsJson(const HyperParams& hp) {
  return Json{{"eta", hp.eta},
              {"c1", hp.c1},
              {"c2", hp.c2},
              {"c3", hp.c3},
              {"restart_interval", hp.restart_interval}};
}

std::string TaskName(TaskKind task) {
  return task == TaskKind::kClassification ? "classification" : "regression";
}

void WriteSummaryJson(const fs::path& path, const ExperimentResult& result) {
  const ExperimentConfig& config = result.config;
  Json doc;

  Json cfg;
  cfg["dataset"] = config.dataset_path;
  cfg["task"] = TaskName(config.task);
  Json algos = Json::array();
  for (AlgoKind algo : config.algos) algos.push_back(AlgoName(algo));
  cfg["algos"] = algos;
  cfg["eps"] = config.budget.eps_dp;
  cfg["delta"] = config.budget.delta_dp;
  cfg["rounds"] = config.rounds;
  cfg["clients"] = config.clients;
  cfg["seeds"] = config.seeds;
  cfg["base_seed"] = config.base_seed;
  cfg["tune"] = config.tune;
  cfg["fast"] = config.fast;
  if (!config.tune) cfg["fixed"] = HyperParamsJson(config.fixed);
  cfg["local_steps"] = config.local_steps;
  cfg["batch"] = config.batch;
  cfg["u"] = config.u;
  cfg["u1"] = config.u1;
  cfg["u2"] = config.u2;
  cfg["metric_stride"] = config.metric_stride;
  cfg["patience_limit"] = config.patience_limit;
  cfg["patience_threshold"] = config.patience_threshold;
  doc["config"] = cfg;

  doc["dataset"] = Json{{"n_train", result.n_train},
                        {"n_test", result.n_test},
                        {"n_min", result.n_min},
                        {"input_dim", result.input_dim},
                        {"output_dim", result.output_dim}};

  Json plans = Json::array();
  for (const auto& entry : result.plans) {
    const NoisePlan& plan = entry.second;
    Json p;
    p["algo"] = AlgoName(entry.first.first);
    p["restart_interval"] = entry.first.second;
    p["alpha"] = plan.alpha;
    p["u1"] = plan.u1;
    p["u2"] = plan.u2;
    p["sigma1_sq"] = plan.sigma1_sq;
    p["sigma2_sq"] = plan.has_sigma2 ? Json(plan.sigma2_sq) : Json(nullptr);
    p["sigma3_sq"] = plan.has_sigma3 ? Json(plan.sigma3_sq) : Json(nullptr);
    p["feasible"] = plan.feasible;
    const BudgetAudit audit = VerifyBudget(plan, ScheduleFromPlan(plan));
    p["audit"] = Json{{"composed_rdp", audit.composed_rdp},
                      {"conversion_term", audit.conversion_term},
                      {"eps_total", audit.eps_total},
                      {"delta", audit.delta}};
    if (plan.has_sigma3) {
      p["local_step_audit"] =
          Json{{"total_rdp", plan.local_rdp_total},
               {"allowance", plan.local_rdp_allowance},
               {"b_limit_subsampling", plan.b_limit_subsampling},
               {"b_limit_noise", plan.b_limit_noise},
               {"closed_form_b_ok", plan.simple_bound_b_ok}};
    }
    plans.push_back(p);
  }
  doc["noise_plans"] = plans;

  Json runs = Json::array();
  for (const RunSummary& s : result.summaries) {
    Json r;
    r["algo"] = AlgoName(s.algo);
    r["seed"] = s.seed_index;
    r["ok"] = s.ok;
    if (!s.ok) {
      r["error"] = s.error;
      runs.push_back(r);
      continue;
    }
    r["chosen_train"] = HyperParamsJson(s.chosen_train);
    r["chosen_grad"] = HyperParamsJson(s.chosen_grad);
    r["min_train_loss"] = s.min_train_loss;
    r["min_train_sq_grad_norm"] = s.min_train_sq_grad_norm;
    r["min_test_loss"] = s.min_test_loss;
    r["comm_vectors_up"] = s.comm_vectors_up;
    r["comm_vectors_down"] = s.comm_vectors_down;
    r["train_curve_csv"] = CurveCsvName(s.algo, s.seed_index);
    r["grad_curve_csv"] = GradWinnerDiffers(s)
                              ? GradCurveCsvName(s.algo, s.seed_index)
                              : CurveCsvName(s.algo, s.seed_index);
    runs.push_back(r);
  }
  doc["runs"] = runs;

  Json comparisons = Json::array();
  for (const PairedComparison& cmp : result.comparisons) {
    Json c;
    c["algo_a"] = AlgoName(cmp.algo_a);
    c["algo_b"] = AlgoName(cmp.algo_b);
    c["metric"] = cmp.metric;
    c["diffs"] = cmp.diffs;
    c["t_stat"] = JsonNumber(cmp.test.t_stat);
    c["p_value"] = cmp.test.p_value;
    comparisons.push_back(c);
  }
  doc["comparisons"] = comparisons;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << doc.dump(2) << '\n';
  out.flush();
  if (!out) {
    throw std::runtime_error("failed while writing " + path.string());
  }
}

enum class PlotMetric { kTrainLoss, kSqGradNorm, kTestLoss };

double PlotValue(const RoundRecord& rec, PlotMetric metric) {
  switch (metric) {
    case PlotMetric::kTrainLoss:
      return rec.train_loss;
    case PlotMetric::kSqGradNorm:
      return rec.train_sq_grad_norm;
    case PlotMetric::kTestLoss:
      return rec.test_loss;
  }
  return 0.0;
}

const std::vector<RoundRecord>& PlotCurve(const RunSummary& summary,
                                          PlotMetric metric) {
  return metric == PlotMetric::kSqGradNorm ? summary.grad_curve
                                           : summary.train_curve;
}

const char* AlgoColor(AlgoKind algo) {
  switch (algo) {
    case AlgoKind::kGd:
      return "#555555";
    case AlgoKind::kDpGd:
      return "#d62728";
    case AlgoKind::kDiff2Gd:
      return "#1f77b4";
    case AlgoKind::kDiff2BvrLsgd:
      return "#2ca02c";
  }
  return "#000000";
}

struct SeriesBand {
  AlgoKind algo = AlgoKind::kGd;
  std::vector<double> mean;
  std::vector<double> lo;  // mean - sample std
  std::vector<double> hi;  // mean + sample std
};

std::vector<SeriesBand> CollectBands(const ExperimentResult& result,
                                     PlotMetric metric) {
  std::vector<SeriesBand> bands;
  for (AlgoKind algo : result.config.algos) {
    std::vector<const std::vector<RoundRecord>*> curves;
    for (const RunSummary& s : result.summaries) {
      if (s.algo == algo && s.ok && !PlotCurve(s, metric).empty()) {
        curves.push_back(&PlotCurve(s, metric));
      }
    }
    if (curves.empty()) continue;
    std::size_t len = curves.front()->size();
    for (const auto* curve : curves) len = std::min(len, curve->size());
    SeriesBand band;
    band.algo = algo;
    band.mean.reserve(len);
    band.lo.reserve(len);
    band.hi.reserve(len);
    const double count = static_cast<double>(curves.size());
    for (std::size_t i = 0; i < len; ++i) {
      double mean = 0.0;
      for (const auto* curve : curves) mean += PlotValue((*curve)[i], metric);
      mean /= count;
      double sd = 0.0;
      if (curves.size() > 1) {
        double ss = 0.0;
        for (const auto* curve : curves) {
          const double d = PlotValue((*curve)[i], metric) - mean;
          ss += d * d;
        }
        sd = std::sqrt(ss / (count - 1.0));
      }
      band.mean.push_back(mean);
      band.lo.push_back(mean - sd);
      band.hi.push_back(mean + sd);
    }
    bands.push_back(std::move(band));
  }
  return bands;
}

std::string FormatCoord(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string FormatTick(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void WriteMetricSvg(const fs::path& path, const ExperimentResult& result,
                    PlotMetric metric, const std::string& title) {
  const std::vector<SeriesBand> bands = CollectBands(result, metric);

  const double width = 800.0;
  const double height = 500.0;
  const double ml = 84.0, mr = 24.0, mt = 48.0, mb = 56.0;
  const double x_max = std::max(1, result.config.rounds);

  double y0 = kInf, y1 = -kInf;
  for (const SeriesBand& band : bands) {
    for (double v : band.lo) {
      if (std::isfinite(v)) y0 = std::min(y0, v);
    }
    for (double v : band.hi) {
      if (std::isfinite(v)) y1 = std::max(y1, v);
    }
  }
  if (!(y0 < y1)) {
    if (!std::isfinite(y0)) {
      y0 = 0.0;
      y1 = 1.0;
    } else {
      const double pad = std::abs(y0) > 0.0 ? std::abs(y0) : 1.0;
      y1 = y0 + pad;
      y0 -= pad;
    }
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const auto map_x = [&](double v) {
    return ml + (v / x_max) * (width - ml - mr);
  };
  const auto map_y = [&](double v) {
    return mt + (1.0 - (v - y0) / (y1 - y0)) * (height - mt - mb);
  };

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" "
         "height=\"500\" viewBox=\"0 0 800 500\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" "
         "fill=\"#ffffff\"/>\n"
      << "<text x=\"" << FormatCoord(width / 2) << "\" y=\"28\" "
         "text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << title << " (mean +/- std over seeds)</text>\n";

  // Axes with five ticks per side.
  out << "<g stroke=\"#222222\" stroke-width=\"1\">\n"
      << "<line x1=\"" << FormatCoord(ml) << "\" y1=\"" << FormatCoord(mt)
      << "\" x2=\"" << FormatCoord(ml) << "\" y2=\""
      << FormatCoord(height - mb) << "\"/>\n"
      << "<line x1=\"" << FormatCoord(ml) << "\" y1=\""
      << FormatCoord(height - mb) << "\" x2=\"" << FormatCoord(width - mr)
      << "\" y2=\"" << FormatCoord(height - mb) << "\"/>\n"
      << "</g>\n";
  out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222222\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_max * i / 4.0;
    const double x = map_x(xv);
    out << "<line x1=\"" << FormatCoord(x) << "\" y1=\""
        << FormatCoord(height - mb) << "\" x2=\"" << FormatCoord(x)
        << "\" y2=\"" << FormatCoord(height - mb + 5) << "\" "
        << "stroke=\"#222222\" stroke-width=\"1\"/>\n"
        << "<text x=\"" << FormatCoord(x) << "\" y=\""
        << FormatCoord(height - mb + 18) << "\" text-anchor=\"middle\">"
        << FormatTick(xv) << "</text>\n";
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double y = map_y(yv);
    out << "<line x1=\"" << FormatCoord(ml - 5) << "\" y1=\"" << FormatCoord(y)
        << "\" x2=\"" << FormatCoord(ml) << "\" y2=\"" << FormatCoord(y)
        << "\" stroke=\"#222222\" stroke-width=\"1\"/>\n"
        << "<text x=\"" << FormatCoord(ml - 8) << "\" y=\""
        << FormatCoord(y + 4) << "\" text-anchor=\"end\">" << FormatTick(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << FormatCoord((ml + width - mr) / 2) << "\" y=\""
      << FormatCoord(height - 12) << "\" text-anchor=\"middle\">round</text>\n"
      << "</g>\n";

  // Bands first (so the mean lines draw on top of every band).
  for (const SeriesBand& band : bands) {
    out << "<polygon fill=\"" << AlgoColor(band.algo)
        << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
    const std::size_t len = band.mean.size();
    for (std::size_t i = 0; i < len; ++i) {
      out << FormatCoord(map_x(static_cast<double>(i))) << ','
          << FormatCoord(map_y(band.hi[i])) << ' ';
    }
    for (std::size_t i = len; i-- > 0;) {
      out << FormatCoord(map_x(static_cast<double>(i))) << ','
          << FormatCoord(map_y(band.lo[i])) << ' ';
    }
    out << "\"/>\n";
  }
  for (const SeriesBand& band : bands) {
    out << "<polyline fill=\"none\" stroke=\"" << AlgoColor(band.algo)
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < band.mean.size(); ++i) {
      out << FormatCoord(map_x(static_cast<double>(i))) << ','
          << FormatCoord(map_y(band.mean[i])) << ' ';
    }
    out << "\"/>\n";
  }

  // Legend, top-right corner of the plot area.
  double ly = mt + 16.0;
  for (const SeriesBand& band : bands) {
    const double lx = width - mr - 170.0;
    out << "<line x1=\"" << FormatCoord(lx) << "\" y1=\"" << FormatCoord(ly)
        << "\" x2=\"" << FormatCoord(lx + 28) << "\" y2=\"" << FormatCoord(ly)
        << "\" stroke=\"" << AlgoColor(band.algo)
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << FormatCoord(lx + 34) << "\" y=\""
        << FormatCoord(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << AlgoName(band.algo) << "</text>\n";
    ly += 18.0;
  }

  out << "</svg>\n";
  out.flush();
  if (!out) {
    throw std::runtime_error("failed while writing " + path.string());
  }
}

}  // namespace

std::string CurveCsvName(AlgoKind algo, int seed_index) {
  return "curve_" + AlgoName(algo) + "_seed" + std::to_string(seed_index) +
         ".csv";
}

void EmitOutputs(const ExperimentResult& result) {
  const fs::path dir(result.config.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory " + dir.string() +
                             ": " + ec.message());
  }

  for (const RunSummary& s : result.summaries) {
    if (!s.ok) continue;
    WriteCurveCsv(dir / CurveCsvName(s.algo, s.seed_index), s.train_curve);
    if (GradWinnerDiffers(s)) {
      WriteCurveCsv(dir / GradCurveCsvName(s.algo, s.seed_index),
                    s.grad_curve);
    }
  }
  WriteSummaryJson(dir / "summary.json", result);
  WriteMetricSvg(dir / "plot_train_loss.svg", result, PlotMetric::kTrainLoss,
                 "train loss");
  WriteMetricSvg(dir / "plot_train_sq_grad_norm.svg", result,
                 PlotMetric::kSqGradNorm, "squared train gradient norm");
  WriteMetricSvg(dir / "plot_test_loss.svg", result, PlotMetric::kTestLoss,
                 "test loss");
}

}  // namespace diff2
