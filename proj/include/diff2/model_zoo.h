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

#ifndef DIFF2_MODEL_ZOO_H_
#define DIFF2_MODEL_ZOO_H_

#include <vector>

#include "diff2/numerics.h"

namespace diff2 {

// Loss attached to the network output.
//
// kSquared is (prediction - target)^2 with no 1/2 factor; the constant is a
// pure convention (it only rescales step-size grids) and is fixed here once
// so every component agrees.  kCrossEntropy is -log softmax_target over the
// output logits.
enum class LossKind {
  kSquared,
  kCrossEntropy,
};

// One-hidden-layer fully connected network with softplus activation: the
// per-record loss is
//
//   regression:      l(x, (a, y)) = (w2 . softplus(W1 a + b1) + b2 - y)^2
//   classification:  l(x, (a, y)) = -log softmax_y(W2 softplus(W1 a + b1) + b2)
//
// Parameters are packed into one flat ParamVector in the order
//   [W1 row-major (hidden_units x input_dim), b1 (hidden_units),
//    W2 row-major (output_dim x hidden_units), b2 (output_dim)],
// so d = input_dim*hidden_units + hidden_units + hidden_units*output_dim +
// output_dim.
struct ModelSpec {
  int input_dim = 1;
  int hidden_units = 10;
  int output_dim = 1;
  LossKind loss = LossKind::kSquared;

  // Total parameter dimension d.
  int ParamCount() const {
    return input_dim * hidden_units + hidden_units +
           hidden_units * output_dim + output_dim;
  }
};

// One record z = (features, target).  For regression the target is the
// response value; for classification it is the class index (stored in the
// same double field, always integral).
struct Sample {
  std::vector<double> features;
  double target = 0.0;
};

// Samples every parameter i.i.d. uniformly from a symmetric interval derived
// from the input width w_in = input_dim: [-1/sqrt(w_in), 1/sqrt(w_in)] by
// default.  literal_range = true instead uses [-sqrt(w_in), sqrt(w_in)]; the
// wide variant saturates softplus almost immediately on unit-scale data and
// exists only for comparison, which is why the reciprocal interval is the
// default.
ParamVector InitParams(const ModelSpec& spec, RngStream& stream,
                       bool literal_range = false);

// Loss of a single record at the given parameters (forward pass only).
double PerSampleLoss(const ModelSpec& spec, const ParamVector& params,
                     const Sample& z);

// Fused forward/backward pass: returns the per-record loss and overwrites
// grad (which must point at spec.ParamCount() doubles) with the exact
// analytic gradient of that loss with respect to the parameters.  This is
// the hot path of every optimizer round; it allocates nothing.
double PerSampleLossAndGradient(const ModelSpec& spec,
                                const ParamVector& params, const Sample& z,
                                double* grad);

// Exact analytic gradient of PerSampleLoss with respect to params.
ParamVector PerSampleGradient(const ModelSpec& spec, const ParamVector& params,
                              const Sample& z);

// Arithmetic mean of per-record gradients over a nonempty batch, accumulated
// in the given (fixed) sample order.
ParamVector BatchMeanGradient(const ModelSpec& spec, const ParamVector& params,
                              const std::vector<Sample>& samples);

// Mean of PerSampleLoss over a nonempty batch.
double BatchMeanLoss(const ModelSpec& spec, const ParamVector& params,
                     const std::vector<Sample>& samples);

// Central-finite-difference gradient of PerSampleLoss, one symmetric
// difference per coordinate with the given step.  Test oracle for the
// analytic gradient; O(d) forward passes, not for production use.
ParamVector FiniteDiffGradient(const ModelSpec& spec,
                               const ParamVector& params, const Sample& z,
                               double step);

}  // namespace diff2

#endif  // DIFF2_MODEL_ZOO_H_
