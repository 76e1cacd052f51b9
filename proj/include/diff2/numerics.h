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

#ifndef DIFF2_NUMERICS_H_
#define DIFF2_NUMERICS_H_

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace diff2 {

// Flat 64-bit-float parameter/gradient vector of dimension d.  All model
// parameters, gradient estimates and noise vectors in this library are plain
// dense vectors; the length is fixed by the problem and never changes through
// arithmetic operations.  All arithmetic is double precision throughout — the
// calibrated DP noise magnitudes (standard deviations around 1e-3) leave no
// headroom for mixed precision.
using ParamVector = std::vector<double>;

// A deterministic, hierarchically derivable random stream.
//
// Every source of randomness in the library (data splits, shard assignment,
// parameter initialization, Gaussian privacy noise, minibatch sampling, the
// randomized output index) is drawn from an RngStream.  A stream is identified
// by a 64-bit seed; child streams are derived from a parent via a (label,
// index) pair.  Two streams with identical root seed and derivation path
// produce identical output sequences, which is the foundation of the
// end-to-end reproducibility contract: re-running an experiment with the same
// root seed reproduces every emitted byte, regardless of how work is
// scheduled across threads.
//
// Derivation is a pure function of the stream's identity (its seed), not of
// its current position, so deriving children commutes with drawing values.
// Labels and indices are mixed into the child seed injectively for practical
// purposes via FNV-1a hashing of the label bytes and a SplitMix64-style
// finalizer; distinct paths yield statistically independent streams.
//
// The underlying generator is std::mt19937_64, whose output sequence is fully
// specified by the C++ standard, so streams are reproducible across platforms
// and standard libraries.  Uniform doubles and Gaussian variates are produced
// by fixed, documented transforms (see UniformDouble and FillGaussian) rather
// than std::*_distribution, whose algorithms are implementation-defined.
class RngStream {
 public:
  // Creates a root stream from a root seed.
  explicit RngStream(uint64_t seed);

  // Derives an independent child stream.  Derivation depends only on this
  // stream's seed and on (label, index); it neither consumes nor depends on
  // the parent's drawing position.
  RngStream Derive(std::string_view label, uint64_t index) const;

  // The seed identifying this stream (root seed mixed with the derivation
  // path).  Exposed for diagnostics and tests.
  uint64_t seed() const { return seed_; }

  // Next raw 64-bit output of the generator.
  uint64_t NextU64();

  // Uniform double in [0, 1), computed as (NextU64() >> 11) * 2^-53 — the top
  // 53 bits of the generator output scaled to the unit interval.
  double UniformDouble();

  // Uniform double in (0, 1], computed as ((NextU64() >> 11) + 1) * 2^-53.
  // Used where a logarithm of the variate must be finite.
  double UniformDoublePositive();

  // Unbiased uniform integer in {0, 1, ..., bound - 1} via rejection
  // sampling on the raw 64-bit output.  bound must be positive.
  uint64_t UniformInt(uint64_t bound);

  // Draws one Box–Muller pair of independent standard normal variates.
  // Consumes exactly two raw 64-bit outputs:
  //   u1 in (0, 1], u2 in [0, 1),
  //   r = sqrt(-2 ln u1), theta = 2 pi u2,
  //   z0 = r cos(theta), z1 = r sin(theta).
  void GaussianPair(double* z0, double* z1);

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

// Euclidean norm sqrt(sum v_i^2).
double L2Norm(const ParamVector& v);

// The clipping scale factor min{radius / norm, 1}.  A zero norm yields 1 by
// convention (the clipped vector is zero either way; the convention avoids a
// 0/0 NaN).  radius must be nonnegative.
double ClipScale(double norm, double radius);

// Rescales v to Euclidean norm at most radius, preserving direction:
// returns min{radius / ||v||, 1} * v.  radius must be positive.  The zero
// vector maps to itself (scale factor 1 by convention).
ParamVector ClipToRadius(const ParamVector& v, double radius);

// Fills out (resized to dim) with dim i.i.d. draws from N(0, stddev^2).
//
// Entropy consumption is a function of dim alone: the stream always advances
// by 2 * ceil(dim / 2) raw draws (Box–Muller pairs; the spare half of the
// final pair of an odd-dim vector is discarded).  In particular stddev = 0
// produces an exactly-zero vector while consuming the same entropy as any
// stddev > 0, so noiseless and noisy runs stay aligned on every subsequent
// random decision.
void FillGaussian(double stddev, int dim, RngStream& stream, ParamVector* out);

// Convenience wrapper around FillGaussian returning a fresh vector.
ParamVector GaussianVector(double stddev, int dim, RngStream& stream);

// *acc += v.  Vectors must have equal length.
void AddInPlace(ParamVector* acc, const ParamVector& v);

// *acc += scale * v.  Vectors must have equal length.
void AddScaledInPlace(ParamVector* acc, const ParamVector& v, double scale);

// *v *= scale.
void ScaleInPlace(ParamVector* v, double scale);

// Elementwise a - b.
ParamVector Subtract(const ParamVector& a, const ParamVector& b);

// True iff every entry is finite.
bool AllFinite(const ParamVector& v);

}  // namespace diff2

#endif  // DIFF2_NUMERICS_H_
