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

#include "diff2/privacy_accountant.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace diff2 {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ln(C(n, k)) via lgamma, exact enough for n up to a few hundred.
double LogBinomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// ln(e^x - 1), stable for both small and large x.
double LogExpm1(double x) {
  if (x <= 0.0) return x > 0.0 ? std::log(std::expm1(x)) : -kInf;
  if (x > 36.0) {
    // e^x dominates; ln(e^x - 1) = x + ln(1 - e^-x).
    return x + std::log1p(-std::exp(-x));
  }
  return std::log(std::expm1(x));
}

// ceil(a / b) for positive integers.
long CeilDiv(long a, long b) { return (a + b - 1) / b; }

void ValidateBudget(const PrivacyBudget& budget) {
  if (!(budget.eps_dp > 0.0)) {
    throw std::invalid_argument("privacy budget requires eps_dp > 0");
  }
  if (!(budget.delta_dp > 0.0 && budget.delta_dp < 1.0)) {
    throw std::invalid_argument("privacy budget requires delta_dp in (0, 1)");
  }
}

}  // namespace

int SelectAlpha(const PrivacyBudget& budget) {
  ValidateBudget(budget);
  const double ratio = 2.0 * std::log(1.0 / budget.delta_dp) / budget.eps_dp;
  const int alpha = 1 + static_cast<int>(std::ceil(ratio));
  return std::max(alpha, 2);
}

RdpPoint GaussianRdp(double sensitivity, double noise_std, double alpha) {
  if (sensitivity < 0.0) {
    throw std::invalid_argument("sensitivity must be nonnegative");
  }
  if (!(alpha > 1.0)) {
    throw std::invalid_argument("Renyi order must exceed 1");
  }
  if (noise_std <= 0.0) {
    if (sensitivity == 0.0) return {alpha, 0.0};
    throw std::invalid_argument(
        "noise_std = 0 with positive sensitivity has infinite RDP");
  }
  return {alpha,
          alpha * sensitivity * sensitivity / (2.0 * noise_std * noise_std)};
}

RdpPoint ComposeRdp(const std::vector<RdpPoint>& points, double alpha) {
  double total = 0.0;
  for (const RdpPoint& p : points) {
    if (p.alpha != alpha) {
      throw std::invalid_argument(
          "RDP composition requires a common Renyi order");
    }
    total += p.eps_rdp;
  }
  return {alpha, total};
}

double RdpToDp(const RdpPoint& point, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("delta must lie in (0, 1)");
  }
  return point.eps_rdp + std::log(1.0 / delta) / (point.alpha - 1.0);
}

NoisePlan CalibrateDiff2Gd(const PrivacyBudget& budget, int rounds,
                           int restart_interval, int n_min, int clients,
                           double u, bool limit_one_u) {
  ValidateBudget(budget);
  if (rounds < 1 || restart_interval < 1 || restart_interval > rounds) {
    throw std::invalid_argument("requires 1 <= T <= R");
  }
  if (n_min < 1 || clients < 1) {
    throw std::invalid_argument("requires n_min >= 1 and P >= 1");
  }
  if (limit_one_u && restart_interval != 1) {
    throw std::invalid_argument("the u -> 1 limit is only defined for T = 1");
  }

  const long restarts = CeilDiv(rounds, restart_interval);
  const long diff_rounds = rounds - restarts;
  // With T = 1 every round is a restart and the entire composition budget
  // funds the restart mechanism: u degenerates to its limit 1 (the DP-GD
  // setting).  For T > 1 a genuine split u > 1 is required.
  const double u_eff = (restart_interval == 1 || limit_one_u) ? 1.0 : u;
  if (restart_interval > 1 && !(u > 1.0)) {
    throw std::invalid_argument("requires u > 1 when T > 1");
  }

  const int alpha = SelectAlpha(budget);
  const double n = static_cast<double>(n_min);
  const double p = static_cast<double>(clients);
  const double denom = n * n * p * p * budget.eps_dp;

  NoisePlan plan;
  plan.budget = budget;
  plan.alpha = alpha;
  plan.u1 = u_eff;
  plan.u2 = 0.0;
  plan.sigma1_sq = 4.0 * u_eff * alpha * static_cast<double>(restarts) / denom;
  plan.has_sigma2 = diff_rounds > 0;
  plan.sigma2_sq =
      plan.has_sigma2
          ? (4.0 * u / (u - 1.0)) * alpha * static_cast<double>(diff_rounds) /
                denom
          : 0.0;
  plan.rounds = rounds;
  plan.restart_interval = restart_interval;
  plan.n_min = n_min;
  plan.clients = clients;
  plan.feasible = true;
  return plan;
}

double SubsampleAmplifiedRdpExact(const std::function<double(int)>& eps_fn,
                                  double gamma, int alpha, double eps_inf) {
  if (alpha < 2) {
    throw std::invalid_argument("subsampling amplification requires alpha >= 2");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("sampling fraction must lie in [0, 1]");
  }
  if (gamma == 0.0) return 0.0;

  const double log_gamma = std::log(gamma);
  // Log-magnitudes of the summands of 1 + sum_j term_j; the leading 1
  // contributes ln(1) = 0.
  std::vector<double> logs;
  logs.reserve(alpha);
  logs.push_back(0.0);

  // j = 2 term: C(alpha,2) gamma^2 min{4 (e^{eps(2)} - 1),
  //                                    e^{eps(2)} min{2, (e^{eps_inf}-1)^2}}.
  {
    const double eps2 = eps_fn(2);
    const double log_branch_a = std::log(4.0) + LogExpm1(eps2);
    double log_min2;  // ln(min{2, (e^{eps_inf} - 1)^2})
    if (std::isinf(eps_inf)) {
      log_min2 = std::log(2.0);
    } else {
      log_min2 = std::min(std::log(2.0), 2.0 * LogExpm1(eps_inf));
    }
    const double log_branch_b = eps2 + log_min2;
    logs.push_back(2.0 * log_gamma + LogBinomial(alpha, 2) +
                   std::min(log_branch_a, log_branch_b));
  }

  // j >= 3 terms: C(alpha,j) gamma^j e^{(j-1) eps(j)} min{2, (e^{eps_inf}-1)^j}.
  for (int j = 3; j <= alpha; ++j) {
    double log_min;  // ln(min{2, (e^{eps_inf} - 1)^j})
    if (std::isinf(eps_inf)) {
      log_min = std::log(2.0);
    } else {
      log_min = std::min(std::log(2.0), j * LogExpm1(eps_inf));
    }
    logs.push_back(j * log_gamma + LogBinomial(alpha, j) +
                   (j - 1.0) * eps_fn(j) + log_min);
  }

  // Log-sum-exp.
  const double m = *std::max_element(logs.begin(), logs.end());
  if (std::isinf(m) && m > 0.0) return kInf;
  double sum = 0.0;
  for (double l : logs) sum += std::exp(l - m);
  const double log_total = m + std::log(sum);
  return log_total / (alpha - 1.0);
}

SimpleSubsamplingBound SubsampleAmplifiedRdpSimple(double eps2, double gamma,
                                                   int alpha, double c) {
  if (alpha < 2) {
    throw std::invalid_argument("subsampling amplification requires alpha >= 2");
  }
  if (!(c > 0.0)) {
    throw std::invalid_argument("c must be positive");
  }
  SimpleSubsamplingBound out;
  out.value = (2.0 / 3.0) * (4.0 + std::numbers::e / c) * gamma * gamma *
              static_cast<double>(alpha) * alpha * eps2 / (alpha - 1.0);
  // Validity conditions, using the Gaussian curve eps(alpha) = alpha*eps2/2.
  const double eps_alpha = alpha * eps2 / 2.0;
  const bool cond_small = eps_alpha <= 1.0 / 3.0;
  const bool cond_log =
      gamma == 0.0 ||
      eps_alpha <= std::log(1.0 / (2.0 * gamma * alpha));
  const bool cond_gamma = gamma <= eps2 / (c * alpha);
  out.conditions_hold = cond_small && cond_log && cond_gamma;
  return out;
}

NoisePlan CalibrateDiff2BvrLsgd(const PrivacyBudget& budget, int rounds,
                                int restart_interval, int local_steps,
                                int clients, int n_min, int batch, double u1,
                                double u2) {
  ValidateBudget(budget);
  if (rounds < 1 || restart_interval < 1 || restart_interval > rounds) {
    throw std::invalid_argument("requires 1 <= T <= R");
  }
  if (local_steps < 1 || batch < 1 || n_min < 1 || clients < 1) {
    throw std::invalid_argument("requires K >= 1, b >= 1, n_min >= 1, P >= 1");
  }
  if (!(u1 > 1.0 && u2 > 1.0)) {
    throw std::invalid_argument("requires u1 > 1 and u2 > 1");
  }

  const int alpha = SelectAlpha(budget);
  const long restarts = CeilDiv(rounds, restart_interval);
  const long diff_rounds = rounds - restarts;
  const long local_participations = CeilDiv(rounds, clients);  // ceil(R/P)
  const double n = static_cast<double>(n_min);
  const double p = static_cast<double>(clients);
  const double denom = n * n * p * p * budget.eps_dp;

  NoisePlan plan;
  plan.budget = budget;
  plan.alpha = alpha;
  plan.u1 = u1;
  plan.u2 = u2;
  plan.sigma1_sq = 4.0 * u1 * alpha * static_cast<double>(restarts) / denom;
  plan.has_sigma2 = diff_rounds > 0;
  plan.sigma2_sq =
      plan.has_sigma2
          ? 4.0 * u2 * alpha * static_cast<double>(diff_rounds) / denom
          : 0.0;
  plan.rounds = rounds;
  plan.restart_interval = restart_interval;
  plan.n_min = n_min;
  plan.clients = clients;
  plan.local_steps = local_steps;
  plan.batch = batch;

  std::string reason;
  auto fail = [&reason](const std::string& why) {
    if (!reason.empty()) reason += "; ";
    reason += why;
  };

  const double slack = 1.0 - 1.0 / u1 - 1.0 / u2;
  if (!(slack > 0.0)) {
    fail("1/u1 + 1/u2 must be below 1");
    plan.has_sigma3 = false;
    plan.feasible = false;
    plan.reason = reason;
    return plan;
  }

  // Local-step noise: the larger of the composition-driven level (the slack
  // share of the budget spread over 2 K ceil(R/P) subsampled releases) and
  // the floor 6 alpha / b^2 under which the amplification lemma's own
  // conditions fail.
  const double a = static_cast<double>(alpha);
  const double composition_term =
      (8.0 / 3.0) * (4.0 + std::numbers::e) * (a * a / (a - 1.0)) * 2.0 *
      static_cast<double>(local_steps) *
      static_cast<double>(local_participations) /
      (slack * n * n * budget.eps_dp);
  const double floor_term = 6.0 * a / (static_cast<double>(batch) * batch);
  plan.has_sigma3 = true;
  plan.sigma3_sq = std::max(composition_term, floor_term);

  // Diagnostics: the validity bounds under which the closed-form sigma3 is
  // proven to pass the audit below.  A b beyond them is not automatically
  // unsafe — the exact-sum audit is the decisive check — so these are
  // recorded but do not gate feasibility.
  plan.b_limit_subsampling = n / (2.0 * std::numbers::e * a);
  plan.b_limit_noise = std::cbrt(4.0 * n / (a * plan.sigma3_sq));
  plan.simple_bound_b_ok =
      static_cast<double>(batch) <= plan.b_limit_subsampling &&
      static_cast<double>(batch) <= plan.b_limit_noise;

  if (batch > n_min) {
    fail("minibatch exceeds n_min (cannot sample without replacement)");
  }

  // Exact-sum audit of the local-step budget share: the calibration's actual
  // sufficient condition for the end-to-end (eps, delta) guarantee.
  const double sigma3_sq = plan.sigma3_sq;
  const double bb = static_cast<double>(batch) * batch;
  const auto eps_fn = [sigma3_sq, bb](int j) {
    return 2.0 * j / (bb * sigma3_sq);
  };
  const double gamma = std::min(static_cast<double>(batch) / n, 1.0);
  const double eps_prime =
      SubsampleAmplifiedRdpExact(eps_fn, gamma, alpha, kInf);
  plan.local_rdp_total = 2.0 * static_cast<double>(local_steps) *
                         static_cast<double>(local_participations) * eps_prime;
  plan.local_rdp_allowance = slack * budget.eps_dp;
  if (!(plan.local_rdp_total <=
        plan.local_rdp_allowance * (1.0 + 1e-12))) {
    fail("exact subsampling audit exceeds the local budget share");
  }

  plan.feasible = reason.empty();
  plan.reason = reason;
  return plan;
}

MechanismSchedule ScheduleFromPlan(const NoisePlan& plan) {
  MechanismSchedule schedule;
  const long restarts = CeilDiv(plan.rounds, plan.restart_interval);
  schedule.restart_rounds = static_cast<int>(restarts);
  schedule.difference_rounds = static_cast<int>(plan.rounds - restarts);
  schedule.n_min = plan.n_min;
  schedule.clients = plan.clients;
  if (plan.has_sigma3) {
    // The local routine contributes K mechanisms for each of the client's
    // ceil(R/P) participations, each (alpha, eps'(alpha))-RDP.  The audit
    // target "composed RDP <= eps/2" then reads
    // 2 K ceil(R/P) eps'(alpha) <= (1 - 1/u1 - 1/u2) eps.
    schedule.local_steps =
        static_cast<long>(plan.local_steps) * CeilDiv(plan.rounds, plan.clients);
    schedule.sampling_fraction =
        static_cast<double>(plan.batch) / plan.n_min;
    schedule.batch = plan.batch;
  }
  return schedule;
}

BudgetAudit VerifyBudget(const NoisePlan& plan,
                         const MechanismSchedule& schedule) {
  if (schedule.restart_rounds > 0 && !(plan.sigma1_sq > 0.0)) {
    throw std::invalid_argument("schedule uses sigma1 but the plan lacks it");
  }
  if (schedule.difference_rounds > 0 &&
      (!plan.has_sigma2 || !(plan.sigma2_sq > 0.0))) {
    throw std::invalid_argument("schedule uses sigma2 but the plan lacks it");
  }
  if (schedule.local_steps > 0 &&
      (!plan.has_sigma3 || !(plan.sigma3_sq > 0.0) || schedule.batch < 1)) {
    throw std::invalid_argument("schedule uses sigma3 but the plan lacks it");
  }

  const double alpha = static_cast<double>(plan.alpha);
  const double np = static_cast<double>(schedule.n_min) * schedule.clients;
  std::vector<RdpPoint> mechanisms;
  mechanisms.reserve(schedule.restart_rounds + schedule.difference_rounds +
                     schedule.local_steps);

  // The clipping radius cancels between sensitivity (2C/(n_min P)) and noise
  // standard deviation (sigma C); evaluate both at C = 1.
  for (int i = 0; i < schedule.restart_rounds; ++i) {
    mechanisms.push_back(
        GaussianRdp(2.0 / np, std::sqrt(plan.sigma1_sq), alpha));
  }
  for (int i = 0; i < schedule.difference_rounds; ++i) {
    mechanisms.push_back(
        GaussianRdp(2.0 / np, std::sqrt(plan.sigma2_sq), alpha));
  }
  if (schedule.local_steps > 0) {
    const double sigma3_sq = plan.sigma3_sq;
    const double bb = static_cast<double>(schedule.batch) * schedule.batch;
    const auto eps_fn = [sigma3_sq, bb](int j) {
      // Gaussian step mechanism: sensitivity 2C/b against noise sigma3 C.
      return 2.0 * j / (bb * sigma3_sq);
    };
    const double eps_prime = SubsampleAmplifiedRdpExact(
        eps_fn, schedule.sampling_fraction, plan.alpha, kInf);
    for (long i = 0; i < schedule.local_steps; ++i) {
      mechanisms.push_back({alpha, eps_prime});
    }
  }

  BudgetAudit audit;
  const RdpPoint composed = ComposeRdp(mechanisms, alpha);
  audit.composed_rdp = composed.eps_rdp;
  audit.conversion_term =
      std::log(1.0 / plan.budget.delta_dp) / (alpha - 1.0);
  audit.eps_total = RdpToDp(composed, plan.budget.delta_dp);
  audit.delta = plan.budget.delta_dp;
  return audit;
}

}  // namespace diff2
