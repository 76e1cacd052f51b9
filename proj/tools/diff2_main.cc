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
// Command-line front end: `diff2 run` executes experiments (tuning, seeds,
// paired t-tests, artifact emission), `diff2 calibrate` prints a noise plan
// with its independent budget audit, and `diff2 selftest` runs quick
// invariant suites over the library.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diff2/harness.h"

namespace {

using Json = nlohmann::ordered_json;

struct RunArgs {
  std::string dataset;
  std::string task = "regression";
  std::vector<std::string> algos;
  double eps = 0.0;
  double delta = 0.0;
  int rounds = 2000;
  int clients = 10;
  int seeds = 5;
  std::uint64_t base_seed = 0;
  bool tune = false;
  bool fast = false;
  double eta = 0.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 1.0;
  int restart_interval = 1;
  int local_steps = 10;
  int batch = 40;
  double u = 1.25;
  double u1 = 3.0;
  double u2 = 3.0;
  int stride = 20;
  int patience = 5;
  double patience_threshold = 1.05;
  int threads = 0;
  std::string out_dir;
};

struct CalibrateArgs {
  std::string algo = "diff2-gd";
  double eps = 0.0;
  double delta = 0.0;
  int rounds = 2000;
  int restart_interval = 1;
  int clients = 10;
  int n_min = 0;
  int local_steps = 10;
  int batch = 40;
  double u = 1.25;
  double u1 = 3.0;
  double u2 = 3.0;
};

Json PlanJson(const diff2::NoisePlan& plan) {
  Json j;
  j["alpha"] = plan.alpha;
  j["u1"] = plan.u1;
  j["u2"] = plan.u2;
  j["sigma1_sq"] = plan.sigma1_sq;
  j["sigma2_sq"] = plan.has_sigma2 ? Json(plan.sigma2_sq) : Json(nullptr);
  j["sigma3_sq"] = plan.has_sigma3 ? Json(plan.sigma3_sq) : Json(nullptr);
  j["rounds"] = plan.rounds;
  j["restart_interval"] = plan.restart_interval;
  j["n_min"] = plan.n_min;
  j["clients"] = plan.clients;
  if (plan.has_sigma3) {
    j["local_steps"] = plan.local_steps;
    j["batch"] = plan.batch;
    j["local_step_audit"] = Json{{"total_rdp", plan.local_rdp_total},
                                 {"allowance", plan.local_rdp_allowance},
                                 {"b_limit_subsampling", plan.b_limit_subsampling},
                                 {"b_limit_noise", plan.b_limit_noise},
                                 {"closed_form_b_ok", plan.simple_bound_b_ok}};
  }
  j["feasible"] = plan.feasible;
  if (!plan.feasible) j["reason"] = plan.reason;
  return j;
}

int RunCommand(const RunArgs& args) {
  diff2::ExperimentConfig config;
  config.dataset_path = args.dataset;
  config.task = args.task == "classification" ? diff2::TaskKind::kClassification
                                              : diff2::TaskKind::kRegression;
  for (const std::string& name : args.algos) {
    config.algos.push_back(diff2::ParseAlgo(name));
  }
  config.budget.eps_dp = args.eps;
  config.budget.delta_dp = args.delta;
  config.rounds = args.rounds;
  config.clients = args.clients;
  config.seeds = args.seeds;
  config.base_seed = args.base_seed;
  config.tune = args.tune;
  config.fast = args.fast;
  if (!config.tune) {
    config.fixed.eta = args.eta;
    config.fixed.c1 = args.c1;
    config.fixed.c2 = args.c2;
    config.fixed.c3 = args.c3;
    config.fixed.restart_interval = args.restart_interval;
  }
  config.local_steps = args.local_steps;
  config.batch = args.batch;
  config.u = args.u;
  config.u1 = args.u1;
  config.u2 = args.u2;
  config.metric_stride = args.stride;
  config.patience_limit = args.patience;
  config.patience_threshold = args.patience_threshold;
  config.threads = args.threads;
  config.out_dir = args.out_dir;

  bool needs_budget = false;
  for (diff2::AlgoKind algo : config.algos) {
    needs_budget = needs_budget || algo != diff2::AlgoKind::kGd;
  }
  if (needs_budget &&
      (!(config.budget.eps_dp > 0.0) ||
       !(config.budget.delta_dp > 0.0 && config.budget.delta_dp < 1.0))) {
    std::cerr << "error: private algorithms require --eps > 0 and --delta in "
                 "(0, 1)\n";
    return 1;
  }

  const diff2::ExperimentResult result = diff2::RunExperiment(config);

  for (const auto& entry : result.plans) {
    const diff2::NoisePlan& plan = entry.second;
    const diff2::BudgetAudit audit =
        diff2::VerifyBudget(plan, diff2::ScheduleFromPlan(plan));
    std::printf(
        "plan  algo=%s T=%d alpha=%d sigma1^2=%.8g sigma2^2=%.8g "
        "sigma3^2=%.8g eps_total=%.8g (budget %.8g)\n",
        diff2::AlgoName(entry.first.first).c_str(), entry.first.second,
        plan.alpha, plan.sigma1_sq, plan.has_sigma2 ? plan.sigma2_sq : 0.0,
        plan.has_sigma3 ? plan.sigma3_sq : 0.0, audit.eps_total,
        plan.budget.eps_dp);
  }

  bool all_ok = true;
  for (const diff2::RunSummary& s : result.summaries) {
    if (s.ok) {
      std::printf(
          "cell  algo=%s seed=%d ok min_train_loss=%.8g "
          "min_train_sq_grad_norm=%.8g min_test_loss=%.8g eta=%g c1=%g c2=%g "
          "T=%d comm_up=%ld comm_down=%ld\n",
          diff2::AlgoName(s.algo).c_str(), s.seed_index, s.min_train_loss,
          s.min_train_sq_grad_norm, s.min_test_loss, s.chosen_train.eta,
          s.chosen_train.c1, s.chosen_train.c2,
          s.chosen_train.restart_interval, s.comm_vectors_up,
          s.comm_vectors_down);
    } else {
      all_ok = false;
      std::printf("cell  algo=%s seed=%d FAILED: %s\n",
                  diff2::AlgoName(s.algo).c_str(), s.seed_index,
                  s.error.c_str());
    }
  }
  for (const diff2::PairedComparison& cmp : result.comparisons) {
    std::printf("test  %s vs %s on %s: n=%zu t=%.6g p=%.6g\n",
                diff2::AlgoName(cmp.algo_a).c_str(),
                diff2::AlgoName(cmp.algo_b).c_str(), cmp.metric.c_str(),
                cmp.diffs.size(), cmp.test.t_stat, cmp.test.p_value);
  }
  if (!args.out_dir.empty()) {
    std::printf("wrote artifacts to %s\n", args.out_dir.c_str());
  }
  std::fflush(stdout);
  return all_ok ? 0 : 1;
}

int CalibrateCommand(const CalibrateArgs& args) {
  const diff2::PrivacyBudget budget{args.eps, args.delta};
  diff2::NoisePlan plan;
  if (args.algo == "dp-gd") {
    plan = diff2::CalibrateDiff2Gd(budget, args.rounds, 1, args.n_min,
                                   args.clients, 1.0, /*limit_one_u=*/true);
  } else if (args.algo == "diff2-gd") {
    plan = diff2::CalibrateDiff2Gd(budget, args.rounds, args.restart_interval,
                                   args.n_min, args.clients, args.u);
  } else {
    plan = diff2::CalibrateDiff2BvrLsgd(budget, args.rounds,
                                        args.restart_interval,
                                        args.local_steps, args.clients,
                                        args.n_min, args.batch, args.u1,
                                        args.u2);
  }

  Json doc;
  doc["algo"] = args.algo;
  doc["eps"] = args.eps;
  doc["delta"] = args.delta;
  doc["plan"] = PlanJson(plan);
  bool ok = plan.feasible;
  if (plan.feasible) {
    const diff2::BudgetAudit audit =
        diff2::VerifyBudget(plan, diff2::ScheduleFromPlan(plan));
    doc["audit"] = Json{{"composed_rdp", audit.composed_rdp},
                        {"conversion_term", audit.conversion_term},
                        {"eps_total", audit.eps_total},
                        {"delta", audit.delta}};
    ok = ok && audit.eps_total <= args.eps * (1.0 + 1e-9);
  }
  std::cout << doc.dump(2) << std::endl;
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// selftest: quick library-level invariant suites (seconds, not minutes).

void Expect(bool condition, const std::string& what) {
  if (!condition) throw std::runtime_error(what);
}

void CheckAccountantComposition() {
  for (double eps : {1.0, 3.0}) {
    for (double delta : {1e-5, 1e-6}) {
      for (int t : {1, 10}) {
        const diff2::PrivacyBudget budget{eps, delta};
        const diff2::NoisePlan plan = diff2::CalibrateDiff2Gd(
            budget, 200, t, 500, 4, 1.5, /*limit_one_u=*/false);
        Expect(plan.feasible, "GD plan unexpectedly infeasible");
        const diff2::BudgetAudit audit =
            diff2::VerifyBudget(plan, diff2::ScheduleFromPlan(plan));
        Expect(std::abs(audit.composed_rdp - eps / 2.0) <= 1e-9 * (eps / 2.0),
               "composed RDP is not half the budget");
        Expect(audit.eps_total <= eps * (1.0 + 1e-12),
               "converted budget exceeds the target");
      }
    }
  }
}

void CheckClippedMeanContract() {
  diff2::RngStream stream(2026);
  std::vector<diff2::ParamVector> vectors;
  for (int i = 0; i < 50; ++i) {
    vectors.push_back(diff2::GaussianVector(3.0, 7, stream));
  }
  for (double radius : {0.25, 1.0, 4.0}) {
    const diff2::ParamVector mean = diff2::ClippedMean(vectors, radius);
    Expect(diff2::L2Norm(mean) <= radius * (1.0 + 1e-12),
           "clipped mean escaped the radius");
  }
  const diff2::ParamVector zero(7, 0.0);
  const diff2::ParamVector mean0 =
      diff2::ClippedMean({zero, zero}, 0.5);
  Expect(diff2::L2Norm(mean0) == 0.0, "zero vectors must average to zero");
}

void CheckRngDeterminism() {
  diff2::RngStream a = diff2::RngStream(7).Derive("a", 1);
  diff2::RngStream b = diff2::RngStream(7).Derive("a", 1);
  diff2::RngStream c = diff2::RngStream(7).Derive("a", 2);
  bool any_diff = false;
  for (int i = 0; i < 5; ++i) {
    const std::uint64_t va = a.NextU64();
    Expect(va == b.NextU64(), "identical derivations must agree");
    any_diff = any_diff || va != c.NextU64();
  }
  Expect(any_diff, "sibling streams must differ");
}

void CheckTTestProperties() {
  const std::vector<double> diffs = {-2.0, -1.0, -3.0, -2.0, -2.0};
  const diff2::TTestResult res = diff2::PairedOneSidedTTest(diffs);
  Expect(res.p_value > 0.0 && res.p_value < 0.05,
         "clearly negative differences must be significant");
  std::vector<double> neg = diffs;
  for (double& d : neg) d = -d;
  const diff2::TTestResult res2 = diff2::PairedOneSidedTTest(neg);
  Expect(std::abs(res.p_value + res2.p_value - 1.0) <= 1e-12,
         "negating differences must mirror the p-value");
  const diff2::TTestResult zero =
      diff2::PairedOneSidedTTest({0.0, 0.0, 0.0, 0.0, 0.0});
  Expect(zero.p_value == 0.5, "all-zero differences must give p = 0.5");
}

void CheckStudentCdf() {
  // Closed form for four degrees of freedom:
  //   F(t) = 1/2 + (3/4) u - (1/4) u^3  with  u = t / sqrt(t^2 + 4).
  for (double t : {-3.0, -0.7, 0.0, 0.4, 1.0, 2.5, 10.0}) {
    const double u = t / std::sqrt(t * t + 4.0);
    const double want = 0.5 + 0.75 * u - 0.25 * u * u * u;
    Expect(std::abs(diff2::StudentTCdf(t, 4) - want) <= 1e-10,
           "Student-t CDF deviates from the df=4 closed form");
  }
}

void CheckPatienceArithmetic() {
  diff2::PatienceController monotone(5, 1.05);
  bool ok = true;
  for (int i = 0; i < 100; ++i) ok = ok && monotone.Observe(100.0 - i);
  Expect(ok, "monotone decrease must never be abandoned");

  diff2::PatienceController rising(5, 1.05);
  Expect(rising.Observe(1.0), "first observation must pass");
  for (int i = 0; i < 4; ++i) {
    Expect(rising.Observe(1.2), "patience must not trip before the limit");
  }
  Expect(!rising.Observe(1.2), "patience must trip at the limit");
}

void CheckPlainGdReduction() {
  diff2::RngStream stream(11);
  std::vector<diff2::Sample> data;
  for (int i = 0; i < 24; ++i) {
    diff2::Sample z;
    const diff2::ParamVector f = diff2::GaussianVector(1.0, 3, stream);
    z.features.assign(f.begin(), f.end());
    z.target = f[0] - 0.5 * f[1];
    data.push_back(z);
  }
  diff2::RngStream part = stream.Derive("part", 0);
  const diff2::Federation fed = diff2::PartitionIid(data, 2, part);
  diff2::ModelSpec spec;
  spec.input_dim = 3;
  spec.hidden_units = 5;
  spec.output_dim = 1;
  diff2::RngStream init = stream.Derive("init", 0);
  const diff2::ParamVector x0 = diff2::InitParams(spec, init);

  diff2::Diff2Config dc;
  dc.restart_interval = 1;
  dc.rounds = 8;
  dc.eta = 0.1;
  dc.c1 = 1e12;
  dc.c2 = 1e12;
  dc.sigma1 = 0.0;
  const diff2::RunOutput a =
      diff2::RunDiff2(dc, fed, spec, x0, diff2::RngStream(99));
  const diff2::RunOutput b =
      diff2::RunPlainGd(fed, spec, x0, 0.1, 8, diff2::RngStream(99));
  Expect(a.trajectory.size() == b.trajectory.size(),
         "reduction trajectories must have equal length");
  for (std::size_t r = 0; r < a.trajectory.size(); ++r) {
    for (std::size_t i = 0; i < a.trajectory[r].size(); ++i) {
      Expect(std::abs(a.trajectory[r][i] - b.trajectory[r][i]) <= 1e-10,
             "noise-free framework run must match plain GD");
    }
  }
}

int SelftestCommand() {
  const std::vector<std::pair<const char*, std::function<void()>>> checks = {
      {"accountant-composition", CheckAccountantComposition},
      {"clipped-mean-contract", CheckClippedMeanContract},
      {"rng-determinism", CheckRngDeterminism},
      {"t-test-properties", CheckTTestProperties},
      {"student-cdf-df4", CheckStudentCdf},
      {"patience-arithmetic", CheckPatienceArithmetic},
      {"plain-gd-reduction", CheckPlainGdReduction},
  };
  for (const auto& check : checks) {
    try {
      check.second();
      std::printf("selftest  %-24s ok\n", check.first);
    } catch (const std::exception& e) {
      std::printf("selftest  %-24s FAILED: %s\n", check.first, e.what());
      return 1;
    }
  }
  std::printf("selftest passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private distributed optimization laboratory"};
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run",
                                     "run experiments: tuning protocol, "
                                     "seeds, paired t-tests, artifacts");
  run->add_option("--dataset", run_args.dataset, "CSV dataset path")
      ->required();
  run->add_option("--task", run_args.task, "prediction task")
      ->check(CLI::IsMember({"regression", "classification"}));
  run->add_option("--algo", run_args.algos,
                  "algorithm to run (repeatable): gd, dp-gd, diff2-gd, "
                  "diff2-bvr-lsgd")
      ->required()
      ->check(CLI::IsMember({"gd", "dp-gd", "diff2-gd", "diff2-bvr-lsgd"}));
  run->add_option("--eps", run_args.eps, "DP epsilon");
  run->add_option("--delta", run_args.delta, "DP delta");
  run->add_option("--rounds", run_args.rounds, "communication rounds R");
  run->add_option("--clients", run_args.clients, "client count P");
  run->add_option("--seeds", run_args.seeds, "number of root seeds");
  run->add_option("--seed", run_args.base_seed, "base seed");
  CLI::Option* tune_opt =
      run->add_flag("--tune", run_args.tune, "run the tuning protocol");
  CLI::Option* eta_opt =
      run->add_option("--eta", run_args.eta, "fixed step size");
  tune_opt->excludes(eta_opt);
  eta_opt->excludes(tune_opt);
  run->add_option("--c1", run_args.c1, "fixed restart clipping radius");
  run->add_option("--c2", run_args.c2, "fixed difference clipping coefficient");
  run->add_option("--c3", run_args.c3, "fixed local clipping coefficient");
  run->add_option("--restart-interval", run_args.restart_interval,
                  "fixed restart interval T");
  run->add_option("--local-steps", run_args.local_steps, "local steps K");
  run->add_option("--batch", run_args.batch, "local minibatch size b");
  run->add_flag("--fast", run_args.fast, "reduced tuning grids");
  run->add_option("--u", run_args.u, "budget split for the one-step method");
  run->add_option("--u1", run_args.u1, "restart budget split (local method)");
  run->add_option("--u2", run_args.u2,
                  "difference budget split (local method)");
  run->add_option("--stride", run_args.stride, "patience check stride");
  run->add_option("--patience", run_args.patience,
                  "patience limit (<= 0 disables abandonment)");
  run->add_option("--patience-threshold", run_args.patience_threshold,
                  "patience degradation threshold");
  run->add_option("--threads", run_args.threads,
                  "worker threads (0 = hardware)");
  run->add_option("--out", run_args.out_dir, "artifact output directory");

  CalibrateArgs cal_args;
  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "calibrate a noise plan and print it with its audit");
  calibrate->add_option("--algo", cal_args.algo, "private algorithm")
      ->check(CLI::IsMember({"dp-gd", "diff2-gd", "diff2-bvr-lsgd"}));
  calibrate->add_option("--eps", cal_args.eps, "DP epsilon")->required();
  calibrate->add_option("--delta", cal_args.delta, "DP delta")->required();
  calibrate->add_option("--rounds", cal_args.rounds, "communication rounds R");
  calibrate->add_option("--restart-interval", cal_args.restart_interval,
                        "restart interval T");
  calibrate->add_option("--clients", cal_args.clients, "client count P");
  calibrate->add_option("--n-min", cal_args.n_min, "smallest shard size")
      ->required();
  calibrate->add_option("--local-steps", cal_args.local_steps,
                        "local steps K");
  calibrate->add_option("--batch", cal_args.batch, "local minibatch size b");
  calibrate->add_option("--u", cal_args.u, "budget split (one-step method)");
  calibrate->add_option("--u1", cal_args.u1, "restart budget split");
  calibrate->add_option("--u2", cal_args.u2, "difference budget split");

  CLI::App* selftest =
      app.add_subcommand("selftest", "run the library invariant suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (!run_args.tune && !(run_args.eta > 0.0)) {
        std::cerr << "error: provide either --tune or --eta <positive>\n";
        return 1;
      }
      return RunCommand(run_args);
    }
    if (calibrate->parsed()) return CalibrateCommand(cal_args);
    if (selftest->parsed()) return SelftestCommand();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
