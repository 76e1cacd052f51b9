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

#include "diff2/model_zoo.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace diff2 {
namespace {

// Overflow-safe softplus max(t, 0) + log1p(exp(-|t|)) together with its
// derivative, the logistic function: both are finite for every representable
// double and share the single exp(-|t|) evaluation, which dominates the cost
// of a hidden unit.
void SoftplusWithDerivative(double t, double* value, double* derivative) {
  const double e = std::exp(-std::abs(t));
  *value = std::max(t, 0.0) + std::log1p(e);
  *derivative = t >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
}

// Reusable per-thread scratch for the fused forward/backward pass; contents
// are fully overwritten on every call.
struct Workspace {
  std::vector<double> hidden;   // softplus(a) for pre-activations a
  std::vector<double> dact;     // logistic(a), the activation derivative
  std::vector<double> logits;   // network outputs
  std::vector<double> dlogits;  // dLoss/dlogits
};

thread_local Workspace tls_workspace;

void ValidateShapes(const ModelSpec& spec, const ParamVector& params,
                    const Sample& z) {
  if (spec.input_dim < 1 || spec.hidden_units < 1 || spec.output_dim < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (static_cast<int>(params.size()) != spec.ParamCount()) {
    throw std::invalid_argument("parameter vector length does not match d");
  }
  if (static_cast<int>(z.features.size()) != spec.input_dim) {
    throw std::invalid_argument("feature length does not match input_dim");
  }
  if (spec.loss == LossKind::kSquared && spec.output_dim != 1) {
    throw std::invalid_argument("squared loss expects a scalar output");
  }
  if (spec.loss == LossKind::kCrossEntropy) {
    const int label = static_cast<int>(z.target);
    if (label < 0 || label >= spec.output_dim ||
        static_cast<double>(label) != z.target) {
      throw std::invalid_argument("class index out of range");
    }
  }
}

// Shared forward pass; fills the workspace and returns the loss.
double Forward(const ModelSpec& spec, const ParamVector& params,
               const Sample& z, Workspace* ws) {
  const int in = spec.input_dim;
  const int h = spec.hidden_units;
  const int out = spec.output_dim;
  const double* w1 = params.data();            // h x in
  const double* b1 = w1 + h * in;              // h
  const double* w2 = b1 + h;                   // out x h
  const double* b2 = w2 + out * h;             // out

  ws->hidden.resize(h);
  ws->dact.resize(h);
  ws->logits.resize(out);

  for (int j = 0; j < h; ++j) {
    double a = b1[j];
    const double* row = w1 + j * in;
    for (int i = 0; i < in; ++i) a += row[i] * z.features[i];
    SoftplusWithDerivative(a, &ws->hidden[j], &ws->dact[j]);
  }
  for (int o = 0; o < out; ++o) {
    double y = b2[o];
    const double* row = w2 + o * h;
    for (int j = 0; j < h; ++j) y += row[j] * ws->hidden[j];
    ws->logits[o] = y;
  }

  if (spec.loss == LossKind::kSquared) {
    const double resid = ws->logits[0] - z.target;
    return resid * resid;
  }
  // Cross entropy: log-sum-exp(logits) - logit_target, stabilized by the max.
  const double m = *std::max_element(ws->logits.begin(), ws->logits.end());
  double sum = 0.0;
  for (double y : ws->logits) sum += std::exp(y - m);
  const double lse = m + std::log(sum);
  return lse - ws->logits[static_cast<int>(z.target)];
}

}  // namespace

ParamVector InitParams(const ModelSpec& spec, RngStream& stream,
                       bool literal_range) {
  const double w_in = static_cast<double>(spec.input_dim);
  const double half_width =
      literal_range ? std::sqrt(w_in) : 1.0 / std::sqrt(w_in);
  const int d = spec.ParamCount();
  ParamVector params(d);
  for (int i = 0; i < d; ++i) {
    params[i] = (2.0 * stream.UniformDouble() - 1.0) * half_width;
  }
  return params;
}

double PerSampleLoss(const ModelSpec& spec, const ParamVector& params,
                     const Sample& z) {
  ValidateShapes(spec, params, z);
  return Forward(spec, params, z, &tls_workspace);
}

double PerSampleLossAndGradient(const ModelSpec& spec,
                                const ParamVector& params, const Sample& z,
                                double* grad) {
  ValidateShapes(spec, params, z);
  Workspace* ws = &tls_workspace;
  const double loss = Forward(spec, params, z, ws);

  const int in = spec.input_dim;
  const int h = spec.hidden_units;
  const int out = spec.output_dim;
  const double* w2 = params.data() + h * in + h;  // out x h
  double* g_w1 = grad;                            // h x in
  double* g_b1 = g_w1 + h * in;                   // h
  double* g_w2 = g_b1 + h;                        // out x h
  double* g_b2 = g_w2 + out * h;                  // out

  // dLoss/dlogits.
  ws->dlogits.resize(out);
  if (spec.loss == LossKind::kSquared) {
    ws->dlogits[0] = 2.0 * (ws->logits[0] - z.target);
  } else {
    const double m = *std::max_element(ws->logits.begin(), ws->logits.end());
    double sum = 0.0;
    for (double y : ws->logits) sum += std::exp(y - m);
    for (int o = 0; o < out; ++o) {
      ws->dlogits[o] = std::exp(ws->logits[o] - m) / sum;
    }
    ws->dlogits[static_cast<int>(z.target)] -= 1.0;
  }

  // Output layer gradients and back-propagated hidden error.
  for (int o = 0; o < out; ++o) {
    const double dz = ws->dlogits[o];
    double* row = g_w2 + o * h;
    for (int j = 0; j < h; ++j) row[j] = dz * ws->hidden[j];
    g_b2[o] = dz;
  }
  for (int j = 0; j < h; ++j) {
    double back = 0.0;
    for (int o = 0; o < out; ++o) back += ws->dlogits[o] * w2[o * h + j];
    const double da = back * ws->dact[j];
    double* row = g_w1 + j * in;
    for (int i = 0; i < in; ++i) row[i] = da * z.features[i];
    g_b1[j] = da;
  }
  return loss;
}

ParamVector PerSampleGradient(const ModelSpec& spec, const ParamVector& params,
                              const Sample& z) {
  ParamVector grad(spec.ParamCount());
  PerSampleLossAndGradient(spec, params, z, grad.data());
  return grad;
}

ParamVector BatchMeanGradient(const ModelSpec& spec, const ParamVector& params,
                              const std::vector<Sample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("batch gradient of an empty sample set");
  }
  const int d = spec.ParamCount();
  ParamVector mean(d, 0.0);
  ParamVector grad(d);
  for (const Sample& z : samples) {
    PerSampleLossAndGradient(spec, params, z, grad.data());
    AddInPlace(&mean, grad);
  }
  ScaleInPlace(&mean, 1.0 / static_cast<double>(samples.size()));
  return mean;
}

double BatchMeanLoss(const ModelSpec& spec, const ParamVector& params,
                     const std::vector<Sample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("batch loss of an empty sample set");
  }
  double total = 0.0;
  for (const Sample& z : samples) total += PerSampleLoss(spec, params, z);
  return total / static_cast<double>(samples.size());
}

ParamVector FiniteDiffGradient(const ModelSpec& spec,
                               const ParamVector& params, const Sample& z,
                               double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite-difference step must be positive");
  }
  const int d = spec.ParamCount();
  ParamVector grad(d);
  ParamVector probe = params;
  for (int i = 0; i < d; ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = PerSampleLoss(spec, probe, z);
    probe[i] = saved - step;
    const double down = PerSampleLoss(spec, probe, z);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace diff2
