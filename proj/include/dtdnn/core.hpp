// Copyright 2026 The dtdnn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Dense sequence types, the portable RNG, and fractional-time sampling.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>

#include "dtdnn/errors.hpp"

namespace dtdnn {

using Index = Eigen::Index;

// A (C, T) feature map: one row per channel, one column per frame.
template <typename Scalar>
using FeatureSeq = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using FeatureSeqd = FeatureSeq<double>;

inline void check_channel(Index c, Index channels) {
  if (c < 0 || c >= channels) {
    throw UsageError("channel index " + std::to_string(c) +
                     " out of range [0, " + std::to_string(channels) + ")");
  }
}

/// Reads x[c][k], treating every frame outside [0, T) as zero.
template <typename Derived>
typename Derived::Scalar read_padded(const Eigen::MatrixBase<Derived>& x,
                                     Index c, Index k) {
  check_channel(c, x.rows());
  if (k < 0 || k >= x.cols()) return typename Derived::Scalar(0);
  return x(c, k);
}

/// Coefficients of a linear-interpolation read at fractional time `t`.
///
/// The sample at `t` is `w_lo * x(lo) + w_hi * x(lo + 1)` with `lo = floor(t)`.
/// `d_dt` is the derivative of that sample with respect to `t`; at integer `t`
/// it takes the right-hand value `x(lo + 1) - x(lo)`.
template <typename Scalar>
struct InterpGrad {
  Scalar w_lo;
  Scalar w_hi;
  Scalar d_dt;
};

// Floor and fractional weights of a sampling position.
template <typename Scalar>
struct SampleTaps {
  Index lo;
  Scalar w_lo;
  Scalar w_hi;
};

template <typename Scalar>
SampleTaps<Scalar> sample_taps(Scalar t) {
  if (!std::isfinite(t)) {
    throw UsageError("sampling position must be finite");
  }
  const Scalar lo = std::floor(t);
  const Scalar frac = t - lo;
  return {static_cast<Index>(lo), Scalar(1) - frac, frac};
}

template <typename Derived>
typename Derived::Scalar interpolate(const Eigen::MatrixBase<Derived>& x,
                                     Index c, typename Derived::Scalar t) {
  using Scalar = typename Derived::Scalar;
  const SampleTaps<Scalar> s = sample_taps(t);
  // Integer positions read the frame directly so the result is bit-exact.
  if (s.w_hi == Scalar(0)) return read_padded(x, c, s.lo);
  return read_padded(x, c, s.lo) * s.w_lo + read_padded(x, c, s.lo + 1) * s.w_hi;
}

template <typename Derived>
InterpGrad<typename Derived::Scalar> interpolate_grad(
    const Eigen::MatrixBase<Derived>& x, Index c, typename Derived::Scalar t) {
  using Scalar = typename Derived::Scalar;
  const SampleTaps<Scalar> s = sample_taps(t);
  const Scalar d_dt = read_padded(x, c, s.lo + 1) - read_padded(x, c, s.lo);
  return {s.w_lo, s.w_hi, d_dt};
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Seeded pseudo-random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are implemented here rather than taken from
/// <random> because the standard leaves their algorithms unspecified, so the
/// same seed yields the same draws on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw UsageError("uniform_int requires n > 0");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  // Standard normal via the Box-Muller transform (one draw per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  bool coin() { return (engine_() >> 63) != 0; }

  // Derives an independent stream for a named sub-task.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

template <typename Scalar>
FeatureSeq<Scalar> random_normal(Index rows, Index cols, Rng& rng,
                                 Scalar scale = Scalar(1)) {
  FeatureSeq<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = scale * Scalar(rng.normal());
  return m;
}

template <typename Scalar>
FeatureSeq<Scalar> random_uniform(Index rows, Index cols, Rng& rng, Scalar lo,
                                  Scalar hi) {
  FeatureSeq<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = Scalar(rng.uniform(lo, hi));
  return m;
}

}  // namespace dtdnn
