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

#include "diff2/diff2_core.h"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace diff2 {
namespace {

double SumSquares(const ParamVector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void ValidateFederation(const Federation& federation) {
  if (federation.shards.empty()) {
    throw std::invalid_argument("federation has no clients");
  }
  for (std::size_t p = 0; p < federation.shards.size(); ++p) {
    const ClientShard& shard = federation.shards[p];
    if (shard.client_id != static_cast<int>(p) + 1) {
      throw std::invalid_argument("client ids must be 1..P in order");
    }
    if (shard.samples.empty()) {
      throw std::invalid_argument("client shard is empty");
    }
  }
}

void ValidateConfig(const Diff2Config& config, const Federation& federation,
                    std::size_t param_count, std::size_t params0_size) {
  if (config.rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (config.restart_interval < 1 || config.restart_interval > config.rounds) {
    throw std::invalid_argument("restart_interval must lie in [1, rounds]");
  }
  if (!(config.eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  if (!(config.c1 > 0.0) || !(config.c2 > 0.0)) {
    throw std::invalid_argument("clipping radii must be > 0");
  }
  if (config.sigma1 < 0.0 || config.sigma2 < 0.0 || config.sigma3 < 0.0) {
    throw std::invalid_argument("noise multipliers must be >= 0");
  }
  if (params0_size != param_count) {
    throw std::invalid_argument("initial parameter dimension mismatch");
  }
  if (config.routine == RoutineKind::kBvrLsgd) {
    if (!(config.c3 > 0.0)) throw std::invalid_argument("c3 must be > 0");
    if (config.local_steps < 1) {
      throw std::invalid_argument("local_steps must be >= 1");
    }
    if (config.batch < 1 ||
        config.batch > federation.MinShardSize()) {
      throw std::invalid_argument("batch must lie in [1, min shard size]");
    }
  }
}

// One full pass over the federation at x: client-mean of per-shard mean
// losses, and the matching mean gradient.  Accumulation order is fixed
// (ascending client id, stored sample order, per-shard mean before the
// cross-shard mean) so that every code path that reports these metrics
// produces identical bytes.
struct PassMetrics {
  double mean_loss = 0.0;
  ParamVector mean_grad;
};

PassMetrics FullPass(const ModelSpec& spec, const Federation& federation,
                     const ParamVector& x) {
  const std::size_t d = spec.ParamCount();
  PassMetrics out;
  out.mean_grad.assign(d, 0.0);
  ParamVector grad(d);
  ParamVector gsum(d);
  for (const ClientShard& shard : federation.shards) {
    const std::size_t n_p = shard.samples.size();
    double loss_sum = 0.0;
    std::fill(gsum.begin(), gsum.end(), 0.0);
    for (const Sample& z : shard.samples) {
      loss_sum += PerSampleLossAndGradient(spec, x, z, grad.data());
      AddInPlace(&gsum, grad);
    }
    out.mean_loss += loss_sum / static_cast<double>(n_p);
    AddScaledInPlace(&out.mean_grad, gsum, 1.0 / static_cast<double>(n_p));
  }
  const double inv_p = 1.0 / static_cast<double>(federation.shards.size());
  out.mean_loss *= inv_p;
  ScaleInPlace(&out.mean_grad, inv_p);
  return out;
}

}  // namespace

ParamVector ClippedMean(const std::vector<ParamVector>& vectors,
                        double radius) {
  if (vectors.empty()) {
    throw std::invalid_argument("ClippedMean needs at least one vector");
  }
  const std::size_t d = vectors.front().size();
  ParamVector sum(d, 0.0);
  for (const ParamVector& v : vectors) {
    if (v.size() != d) {
      throw std::invalid_argument("ClippedMean dimension mismatch");
    }
    AddScaledInPlace(&sum, v, ClipScale(L2Norm(v), radius));
  }
  ScaleInPlace(&sum, 1.0 / static_cast<double>(vectors.size()));
  return sum;
}

RoundMessage LocalMessage(const ModelSpec& spec, const ClientShard& shard,
                          const ParamVector& x_curr, const ParamVector* x_prev,
                          bool is_restart, double c1, double c2) {
  const std::size_t d = spec.ParamCount();
  if (x_curr.size() != d || (x_prev != nullptr && x_prev->size() != d)) {
    throw std::invalid_argument("LocalMessage parameter dimension mismatch");
  }
  if (!is_restart && x_prev == nullptr) {
    throw std::invalid_argument("difference rounds require the previous point");
  }
  RoundMessage msg;
  msg.client_id = shard.client_id;
  msg.kind = is_restart ? MessageKind::kGradient : MessageKind::kDifference;

  double radius = c1;
  if (!is_restart) {
    ParamVector displacement = Subtract(x_curr, *x_prev);
    radius = c2 * L2Norm(displacement);
  }
  msg.radius_used = radius;

  ParamVector sum(d, 0.0);
  ParamVector grad(d);
  ParamVector prev_grad(d);
  ParamVector diff(d);
  for (const Sample& z : shard.samples) {
    PerSampleLossAndGradient(spec, x_curr, z, grad.data());
    if (is_restart) {
      AddScaledInPlace(&sum, grad, ClipScale(L2Norm(grad), radius));
    } else {
      PerSampleLossAndGradient(spec, *x_prev, z, prev_grad.data());
      for (std::size_t j = 0; j < d; ++j) diff[j] = grad[j] - prev_grad[j];
      AddScaledInPlace(&sum, diff, ClipScale(L2Norm(diff), radius));
    }
  }
  ScaleInPlace(&sum, 1.0 / static_cast<double>(shard.samples.size()));
  msg.vector = std::move(sum);
  return msg;
}

ParamVector AggregateAndPrivatize(const std::vector<RoundMessage>& messages,
                                  const ParamVector& v_tilde_prev,
                                  double sigma, RngStream& stream) {
  if (messages.empty()) {
    throw std::invalid_argument("AggregateAndPrivatize needs messages");
  }
  const std::size_t d = messages.front().vector.size();
  const MessageKind kind = messages.front().kind;
  const double radius = messages.front().radius_used;
  for (const RoundMessage& msg : messages) {
    if (msg.vector.size() != d) {
      throw std::invalid_argument("message dimension mismatch");
    }
    if (msg.kind != kind || msg.radius_used != radius) {
      throw std::invalid_argument("messages disagree on kind or radius");
    }
  }
  if (!v_tilde_prev.empty() && v_tilde_prev.size() != d) {
    throw std::invalid_argument("carried estimate dimension mismatch");
  }

  ParamVector v(d, 0.0);
  for (const RoundMessage& msg : messages) AddInPlace(&v, msg.vector);
  ScaleInPlace(&v, 1.0 / static_cast<double>(messages.size()));
  if (!v_tilde_prev.empty()) AddInPlace(&v, v_tilde_prev);
  // Drawn even when sigma * radius == 0 so that runs with and without noise
  // consume identical stream entropy.
  ParamVector noise = GaussianVector(sigma * radius, static_cast<int>(d), stream);
  AddInPlace(&v, noise);
  return v;
}

std::pair<ParamVector, ParamVector> GdRoutineStep(const ParamVector& x_prev,
                                                  const ParamVector& v_tilde,
                                                  double eta) {
  if (x_prev.size() != v_tilde.size()) {
    throw std::invalid_argument("GdRoutineStep dimension mismatch");
  }
  ParamVector x = x_prev;
  AddScaledInPlace(&x, v_tilde, -eta);
  return {x, x};
}

std::pair<ParamVector, ParamVector> BvrLsgdRoutine(
    const ModelSpec& spec, const ClientShard& shard, const ParamVector& x0,
    const ParamVector& v1_tilde, double eta, int batch, double sigma3,
    double c3, int local_steps, const RngStream& round_stream) {
  const std::size_t d = x0.size();
  if (v1_tilde.size() != d ||
      d != static_cast<std::size_t>(spec.ParamCount())) {
    throw std::invalid_argument("BvrLsgdRoutine dimension mismatch");
  }
  if (local_steps < 1) throw std::invalid_argument("local_steps must be >= 1");
  if (batch < 1 || static_cast<std::size_t>(batch) > shard.samples.size()) {
    throw std::invalid_argument("batch must lie in [1, shard size]");
  }

  std::vector<ParamVector> xs;
  xs.reserve(static_cast<std::size_t>(local_steps) + 1);
  xs.push_back(x0);
  {
    ParamVector x1 = x0;
    AddScaledInPlace(&x1, v1_tilde, -eta);
    xs.push_back(std::move(x1));
  }

  const std::size_t n = shard.samples.size();
  std::vector<std::size_t> order(n);
  ParamVector v_tilde = v1_tilde;
  ParamVector grad(d);
  ParamVector prev_grad(d);
  ParamVector diff(d);
  for (int k = 2; k <= local_steps; ++k) {
    const ParamVector& x_curr = xs[static_cast<std::size_t>(k) - 1];
    const ParamVector& x_prev = xs[static_cast<std::size_t>(k) - 2];

    // Minibatch without replacement, kept in selection order.
    RngStream mb = round_stream.Derive("mb", static_cast<std::uint64_t>(k));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int i = 0; i < batch; ++i) {
      const std::size_t j =
          static_cast<std::size_t>(i) +
          static_cast<std::size_t>(mb.UniformInt(
              static_cast<std::uint64_t>(n - static_cast<std::size_t>(i))));
      std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }

    ParamVector displacement = Subtract(x_curr, x_prev);
    const double radius = c3 * L2Norm(displacement);

    ParamVector sum(d, 0.0);
    for (int i = 0; i < batch; ++i) {
      const Sample& z = shard.samples[order[static_cast<std::size_t>(i)]];
      PerSampleLossAndGradient(spec, x_curr, z, grad.data());
      PerSampleLossAndGradient(spec, x_prev, z, prev_grad.data());
      for (std::size_t j = 0; j < d; ++j) diff[j] = grad[j] - prev_grad[j];
      AddScaledInPlace(&sum, diff, ClipScale(L2Norm(diff), radius));
    }
    ScaleInPlace(&sum, 1.0 / static_cast<double>(batch));
    AddInPlace(&sum, v_tilde);

    RngStream noise =
        round_stream.Derive("xi_local", static_cast<std::uint64_t>(k));
    ParamVector xi = GaussianVector(sigma3 * radius, static_cast<int>(d), noise);
    AddInPlace(&sum, xi);
    v_tilde = std::move(sum);

    ParamVector x_next = x_curr;
    AddScaledInPlace(&x_next, v_tilde, -eta);
    xs.push_back(std::move(x_next));
  }

  RngStream khat_stream = round_stream.Derive("khat", 0);
  const int khat =
      1 + static_cast<int>(
              khat_stream.UniformInt(static_cast<std::uint64_t>(local_steps)));
  ParamVector x_last = xs.back();
  ParamVector x_out = xs[static_cast<std::size_t>(khat) - 1];
  return {std::move(x_last), std::move(x_out)};
}

RunOutput RunDiff2(const Diff2Config& config, const Federation& federation,
                   const ModelSpec& spec, const ParamVector& params0,
                   const RngStream& root_stream,
                   const RoundPassObserver& observer) {
  ValidateFederation(federation);
  const std::size_t d = spec.ParamCount();
  ValidateConfig(config, federation, d, params0.size());
  const int clients = federation.clients();
  const int rounds = config.rounds;

  RunOutput out;
  out.trajectory.reserve(static_cast<std::size_t>(rounds) + 1);
  out.candidate_outputs.reserve(static_cast<std::size_t>(rounds) + 1);
  out.trajectory.push_back(params0);
  out.candidate_outputs.push_back(params0);

  // Per-record gradients from the previous round, so difference rounds cost
  // one fresh gradient per record instead of two.  cache[p] is laid out as
  // shard-size rows of length d; it always holds the gradients at the most
  // recently completed pass point.
  std::vector<std::vector<double>> cache(static_cast<std::size_t>(clients));
  for (int p = 0; p < clients; ++p) {
    cache[static_cast<std::size_t>(p)].resize(
        federation.shards[static_cast<std::size_t>(p)].samples.size() * d);
  }

  ParamVector x = params0;   // x_{r-1}
  ParamVector x_prev2;       // x_{r-2}; empty before round 2
  ParamVector v_tilde;       // empty encodes the restart reset to zero
  ParamVector grad(d);
  ParamVector diff(d);
  ParamVector gsum(d);

  for (int r = 1; r <= rounds; ++r) {
    const bool is_restart = ((r - 1) % config.restart_interval == 0);
    const RngStream round_stream =
        root_stream.Derive("round", static_cast<std::uint64_t>(r));

    double radius = config.c1;
    if (!is_restart) {
      ParamVector displacement = Subtract(x, x_prev2);
      radius = config.c2 * L2Norm(displacement);
    }

    std::vector<RoundMessage> messages;
    messages.reserve(static_cast<std::size_t>(clients));
    double mean_loss = 0.0;
    ParamVector mean_grad(d, 0.0);

    for (int p = 0; p < clients; ++p) {
      const ClientShard& shard = federation.shards[static_cast<std::size_t>(p)];
      const std::size_t n_p = shard.samples.size();
      double* cache_p = cache[static_cast<std::size_t>(p)].data();

      RoundMessage msg;
      msg.client_id = shard.client_id;
      msg.kind =
          is_restart ? MessageKind::kGradient : MessageKind::kDifference;
      msg.radius_used = radius;

      ParamVector sum(d, 0.0);
      double loss_sum = 0.0;
      std::fill(gsum.begin(), gsum.end(), 0.0);
      for (std::size_t i = 0; i < n_p; ++i) {
        loss_sum +=
            PerSampleLossAndGradient(spec, x, shard.samples[i], grad.data());
        AddInPlace(&gsum, grad);
        double* cached = cache_p + i * d;
        if (is_restart) {
          AddScaledInPlace(&sum, grad, ClipScale(L2Norm(grad), radius));
        } else {
          for (std::size_t j = 0; j < d; ++j) diff[j] = grad[j] - cached[j];
          AddScaledInPlace(&sum, diff, ClipScale(L2Norm(diff), radius));
        }
        std::copy(grad.begin(), grad.end(), cached);
      }
      ScaleInPlace(&sum, 1.0 / static_cast<double>(n_p));
      msg.vector = std::move(sum);
      messages.push_back(std::move(msg));

      mean_loss += loss_sum / static_cast<double>(n_p);
      AddScaledInPlace(&mean_grad, gsum, 1.0 / static_cast<double>(n_p));
    }
    const double inv_p = 1.0 / static_cast<double>(clients);
    mean_loss *= inv_p;
    ScaleInPlace(&mean_grad, inv_p);
    const double sq_grad_norm = SumSquares(mean_grad);

    if (!std::isfinite(mean_loss) || !std::isfinite(sq_grad_norm)) {
      out.diverged = true;
      out.diverged_round = r - 1;
      break;
    }
    if (observer && !observer(r - 1, mean_loss, sq_grad_norm)) {
      out.aborted = true;
      break;
    }

    RngStream noise_stream = round_stream.Derive("xi", 0);
    const double sigma = is_restart ? config.sigma1 : config.sigma2;
    ParamVector v_tilde_new = AggregateAndPrivatize(
        messages, is_restart ? ParamVector() : v_tilde, sigma, noise_stream);

    ParamVector x_next;
    ParamVector x_out_r;
    if (config.routine == RoutineKind::kGd) {
      std::tie(x_next, x_out_r) = GdRoutineStep(x, v_tilde_new, config.eta);
    } else {
      const int p_r = SelectLocalClient(r, clients);
      const ClientShard& shard =
          federation.shards[static_cast<std::size_t>(p_r) - 1];
      std::tie(x_next, x_out_r) = BvrLsgdRoutine(
          spec, shard, x, v_tilde_new, config.eta, config.batch, config.sigma3,
          config.c3, config.local_steps, round_stream);
    }

    if (!AllFinite(x_next)) {
      out.diverged = true;
      out.diverged_round = r;
      break;
    }

    LogRoundComm(&out.comm, r, config.routine == RoutineKind::kBvrLsgd,
                 clients);
    out.trajectory.push_back(x_next);
    out.candidate_outputs.push_back(std::move(x_out_r));
    x_prev2 = std::move(x);
    x = std::move(x_next);
    v_tilde = std::move(v_tilde_new);
  }

  if (!out.diverged && !out.aborted) {
    if (observer) {
      const std::pair<double, double> final_metrics =
          EvaluateTrainMetrics(spec, federation, x);
      observer(rounds, final_metrics.first, final_metrics.second);
    }
    // The output pool is x_0^out .. x_{R-1}^out (the final round's candidate
    // is produced but never selected).
    RngStream rhat_stream = root_stream.Derive("rhat", 0);
    out.r_hat = 1 + static_cast<int>(rhat_stream.UniformInt(
                        static_cast<std::uint64_t>(rounds)));
    out.x_out = out.candidate_outputs[static_cast<std::size_t>(out.r_hat) - 1];
  } else {
    out.r_hat = 0;
    out.x_out = out.trajectory.back();
  }
  return out;
}

RunOutput RunPlainGd(const Federation& federation, const ModelSpec& spec,
                     const ParamVector& params0, double eta, int rounds,
                     const RngStream& root_stream,
                     const RoundPassObserver& observer) {
  ValidateFederation(federation);
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  if (params0.size() != static_cast<std::size_t>(spec.ParamCount())) {
    throw std::invalid_argument("initial parameter dimension mismatch");
  }
  (void)root_stream;  // reserved: the baseline consumes no randomness

  RunOutput out;
  out.trajectory.reserve(static_cast<std::size_t>(rounds) + 1);
  out.candidate_outputs.reserve(static_cast<std::size_t>(rounds) + 1);
  out.trajectory.push_back(params0);
  out.candidate_outputs.push_back(params0);

  ParamVector x = params0;
  for (int r = 1; r <= rounds; ++r) {
    PassMetrics pass = FullPass(spec, federation, x);
    const double sq_grad_norm = SumSquares(pass.mean_grad);
    if (!std::isfinite(pass.mean_loss) || !std::isfinite(sq_grad_norm)) {
      out.diverged = true;
      out.diverged_round = r - 1;
      break;
    }
    if (observer && !observer(r - 1, pass.mean_loss, sq_grad_norm)) {
      out.aborted = true;
      break;
    }
    ParamVector x_next = x;
    AddScaledInPlace(&x_next, pass.mean_grad, -eta);
    if (!AllFinite(x_next)) {
      out.diverged = true;
      out.diverged_round = r;
      break;
    }
    LogRoundComm(&out.comm, r, /*local_routine=*/false, federation.clients());
    out.trajectory.push_back(x_next);
    out.candidate_outputs.push_back(x_next);
    x = std::move(x_next);
  }

  if (!out.diverged && !out.aborted) {
    if (observer) {
      const std::pair<double, double> final_metrics =
          EvaluateTrainMetrics(spec, federation, x);
      observer(rounds, final_metrics.first, final_metrics.second);
    }
  }
  // The deterministic baseline has no randomized stopping: the run's answer
  // is its final iterate.
  out.r_hat = 0;
  out.x_out = out.trajectory.back();
  return out;
}

std::pair<double, double> EvaluateTrainMetrics(const ModelSpec& spec,
                                               const Federation& federation,
                                               const ParamVector& x) {
  ValidateFederation(federation);
  PassMetrics pass = FullPass(spec, federation, x);
  return {pass.mean_loss, SumSquares(pass.mean_grad)};
}

}  // namespace diff2
