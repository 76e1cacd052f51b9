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

#include "diff2/numerics.h"

#include <cassert>
#include <cmath>
#include <cstddef>

namespace diff2 {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// SplitMix64 finalizer: a fast, well-mixed bijection on 64-bit words.
uint64_t Mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// FNV-1a over the label bytes.
uint64_t HashLabel(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed) : seed_(seed), engine_(seed) {}

RngStream RngStream::Derive(std::string_view label, uint64_t index) const {
  // Child seed mixes the parent identity, the label hash and the index
  // through independent finalizer applications.  The golden-ratio constant
  // separates the index domain from the label domain so that ("a", 1) and a
  // label whose hash happens to equal 1 cannot collide by construction of a
  // single xor.
  uint64_t child = seed_;
  child = Mix64(child ^ HashLabel(label));
  child = Mix64(child ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
  return RngStream(child);
}

uint64_t RngStream::NextU64() { return engine_(); }

double RngStream::UniformDouble() {
  return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
}

double RngStream::UniformDoublePositive() {
  return static_cast<double>((NextU64() >> 11) + 1) * 0x1.0p-53;
}

uint64_t RngStream::UniformInt(uint64_t bound) {
  assert(bound > 0);
  // Classic rejection sampling: draw from the largest multiple of bound that
  // fits in 64 bits, then reduce.  Unbiased and reproducible.
  const uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
  uint64_t draw;
  do {
    draw = NextU64();
  } while (draw > limit);
  return draw % bound;
}

void RngStream::GaussianPair(double* z0, double* z1) {
  const double u1 = UniformDoublePositive();
  const double u2 = UniformDouble();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = kTwoPi * u2;
  *z0 = r * std::cos(theta);
  *z1 = r * std::sin(theta);
}

double L2Norm(const ParamVector& v) {
  double sum_sq = 0.0;
  for (double x : v) sum_sq += x * x;
  return std::sqrt(sum_sq);
}

double ClipScale(double norm, double radius) {
  assert(radius >= 0.0);
  if (norm == 0.0) return 1.0;
  const double scale = radius / norm;
  return scale < 1.0 ? scale : 1.0;
}

ParamVector ClipToRadius(const ParamVector& v, double radius) {
  assert(radius > 0.0);
  const double scale = ClipScale(L2Norm(v), radius);
  ParamVector out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i];
  return out;
}

void FillGaussian(double stddev, int dim, RngStream& stream,
                  ParamVector* out) {
  assert(stddev >= 0.0);
  assert(dim > 0);
  out->assign(dim, 0.0);
  for (int i = 0; i < dim; i += 2) {
    double z0, z1;
    stream.GaussianPair(&z0, &z1);
    (*out)[i] = stddev * z0;
    if (i + 1 < dim) (*out)[i + 1] = stddev * z1;
  }
}

ParamVector GaussianVector(double stddev, int dim, RngStream& stream) {
  ParamVector out;
  FillGaussian(stddev, dim, stream, &out);
  return out;
}

void AddInPlace(ParamVector* acc, const ParamVector& v) {
  assert(acc->size() == v.size());
  for (size_t i = 0; i < v.size(); ++i) (*acc)[i] += v[i];
}

void AddScaledInPlace(ParamVector* acc, const ParamVector& v, double scale) {
  assert(acc->size() == v.size());
  for (size_t i = 0; i < v.size(); ++i) (*acc)[i] += scale * v[i];
}

void ScaleInPlace(ParamVector* v, double scale) {
  for (double& x : *v) x *= scale;
}

ParamVector Subtract(const ParamVector& a, const ParamVector& b) {
  assert(a.size() == b.size());
  ParamVector out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

bool AllFinite(const ParamVector& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace diff2
