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

#ifndef DIFF2_DIFF2_CORE_H_
#define DIFF2_DIFF2_CORE_H_

#include <functional>
#include <utility>
#include <vector>

#include "diff2/federation.h"
#include "diff2/model_zoo.h"
#include "diff2/numerics.h"

namespace diff2 {

// Which sub-routine turns the private global gradient estimate into the next
// iterate.
enum class RoutineKind {
  kGd,       // one full-gradient step per round
  kBvrLsgd,  // bias/variance-reduced local SGD on one round-robin client
};

// Full configuration of one optimizer run.
//
// The framework alternates two mechanisms on a fixed schedule: round r
// (1-based) is a *restart* round iff (r - 1) mod T = 0.  Restart rounds
// rebuild the gradient estimate from clipped per-record gradients (radius C1,
// noise multiplier sigma1); the rounds in between communicate clipped
// per-record gradient *differences* whose radius C2r = C2 ||x_{r-1} - x_{r-2}||
// shrinks with the step displacement (noise multiplier sigma2), which is the
// source of the method's privacy advantage.  Noise standard deviations are
// always sigma * C for the radius C in force.
struct Diff2Config {
  int restart_interval = 1;  // T, in [1, R]
  int rounds = 1;            // R
  double eta = 0.1;          // step size, > 0
  double c1 = 1.0;           // restart clipping radius, > 0
  double c2 = 1.0;           // difference clipping coefficient, > 0
  double c3 = 1.0;           // local-step clipping coefficient (BVR), > 0
  double sigma1 = 0.0;       // noise multipliers, >= 0
  double sigma2 = 0.0;
  double sigma3 = 0.0;
  RoutineKind routine = RoutineKind::kGd;
  int local_steps = 1;  // K >= 1 (BVR)
  int batch = 1;        // b >= 1 (BVR), at most the smallest shard
};

// Kind of payload a client uploads in a given round.
enum class MessageKind {
  kGradient,    // clipped mean of per-record gradients (restart rounds)
  kDifference,  // clipped mean of per-record gradient differences
};

// One client's upload for one round.
struct RoundMessage {
  int client_id = 0;
  ParamVector vector;  // norm is at most radius_used (plus fp slack)
  MessageKind kind = MessageKind::kGradient;
  double radius_used = 0.0;  // C1, or C2r on difference rounds
};

// Server-side recursion state of the gradient estimator.
struct EstimatorState {
  ParamVector v_tilde;   // the current private estimate
  ParamVector x_prev;    // x_{r-1}
  ParamVector x_prev2;   // x_{r-2}; empty on rounds following a restart
  int round = 0;         // r
  int last_restart = 0;  // most recent restart round index
};

// Everything a finished (or halted) run exposes.
struct RunOutput {
  // x_0 .. x_R (length R+1 when the run completes).
  std::vector<ParamVector> trajectory;
  // Per-round candidate outputs: index 0 holds x_0 by convention, index r
  // holds the routine's designated output for round r.
  std::vector<ParamVector> candidate_outputs;
  // The randomized final output: candidate_outputs[r_hat - 1] with r_hat
  // drawn uniformly from {1, ..., R}.
  ParamVector x_out;
  int r_hat = 0;
  // Set when a non-finite loss or iterate halted the run; the partial
  // trajectory up to the last finite iterate is retained.
  bool diverged = false;
  int diverged_round = -1;
  // Set when the observer requested an early stop (hyperparameter search).
  bool aborted = false;
  CommLog comm;
};

// Per-round metrics callback.  Invoked once per executed round with the full
// train loss and squared full-gradient norm at the round's starting point
// x_{r-1} (these come for free from the gradient pass), and once more after
// the final round for x_R.  x_index is the iterate index (0-based).  Return
// false to stop the run early; the output is then marked aborted.
using RoundPassObserver =
    std::function<bool(int x_index, double train_loss, double sq_grad_norm)>;

// Mean of the radius-C clippings of the given vectors: (1/n) sum_i
// min{C / ||v_i||, 1} v_i.  The output norm is at most C.  Throws on an
// empty input or mismatched dimensions.
ParamVector ClippedMean(const std::vector<ParamVector>& vectors, double radius);

// Builds client p's upload for one round.  On restart rounds this is the
// clipped mean (radius c1) of the per-record gradients at x_curr = x_{r-1};
// otherwise it is the clipped mean of per-record gradient differences
// between x_curr = x_{r-1} and x_prev = x_{r-2}, at radius
// C2r = c2 ||x_curr - x_prev||.  A zero displacement yields a zero message
// with radius 0.  x_prev is required (non-null) on non-restart rounds.
RoundMessage LocalMessage(const ModelSpec& spec, const ClientShard& shard,
                          const ParamVector& x_curr, const ParamVector* x_prev,
                          bool is_restart, double c1, double c2);

// Server aggregation: v_r = (1/P) sum_p d_r^{(p)} + v_tilde_prev, followed by
// the Gaussian release v~_r = v_r + N(0, sigma^2 C^2 I) where C is the
// messages' common radius.  Pass an empty v_tilde_prev on restart rounds (the
// recursion resets to zero there).  All messages must share kind and radius.
// A zero radius (zero displacement) adds exactly zero noise while consuming
// the same stream entropy.
ParamVector AggregateAndPrivatize(const std::vector<RoundMessage>& messages,
                                  const ParamVector& v_tilde_prev,
                                  double sigma, RngStream& stream);

// The one-step gradient-descent routine: x_r = x_{r-1} - eta * v_tilde.
// Returns (x_r, x_r^out) which coincide for this routine.
std::pair<ParamVector, ParamVector> GdRoutineStep(const ParamVector& x_prev,
                                                  const ParamVector& v_tilde,
                                                  double eta);

// The local bias/variance-reduced SGD routine run by the round's designated
// client.  Starting from x_0 (the server iterate x_{r-1}) and the private
// estimate v1_tilde:
//
//   x_1 = x_0 - eta * v1_tilde
//   for k = 2..K:
//     draw I_k: batch indices without replacement from the shard
//     C3k    = c3 * ||x_{k-1} - x_{k-2}||
//     v_k    = ClippedMean({grad(x_{k-1}, z) - grad(x_{k-2}, z)}_{z in I_k},
//                          C3k) + v~_{k-1}
//     v~_k   = v_k + N(0, sigma3^2 C3k^2 I)
//     x_k    = x_{k-1} - eta * v~_k
//
// Returns (x_K, x_{khat-1}) with khat uniform on {1, ..., K}; K = 1 performs
// only the first step and returns (x_1, x_0) without touching shard data.
// Randomness (minibatches, noise, khat) is derived from round_stream.
std::pair<ParamVector, ParamVector> BvrLsgdRoutine(
    const ModelSpec& spec, const ClientShard& shard, const ParamVector& x0,
    const ParamVector& v1_tilde, double eta, int batch, double sigma3,
    double c3, int local_steps, const RngStream& round_stream);

// Executes the full R-round loop: restart schedule, client messages,
// privatized aggregation, routine dispatch, communication accounting, and
// the final uniformly random output choice.  Deterministic given
// (config, federation, params0, root_stream); the observer only reads.
RunOutput RunDiff2(const Diff2Config& config, const Federation& federation,
                   const ModelSpec& spec, const ParamVector& params0,
                   const RngStream& root_stream,
                   const RoundPassObserver& observer = nullptr);

// Non-private full-batch gradient descent baseline under the same federation
// conventions (the objective is the client-average of per-shard mean losses):
// x_r = x_{r-1} - eta * grad f(x_{r-1}).  Shares RunOutput/observer semantics
// with RunDiff2; every round costs (P up, P down) vectors.
RunOutput RunPlainGd(const Federation& federation, const ModelSpec& spec,
                     const ParamVector& params0, double eta, int rounds,
                     const RngStream& root_stream,
                     const RoundPassObserver& observer = nullptr);

// Exact train metrics under the client-mean convention: returns the pair
// (f(x), ||grad f(x)||^2) with f the average over shards of per-shard mean
// loss.  Reduction order is fixed (ascending client id, fixed sample order).
std::pair<double, double> EvaluateTrainMetrics(const ModelSpec& spec,
                                               const Federation& federation,
                                               const ParamVector& x);

}  // namespace diff2

#endif  // DIFF2_DIFF2_CORE_H_
