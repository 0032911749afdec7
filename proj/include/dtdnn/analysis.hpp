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

// Receptive-field maps, lookahead, offset statistics, and the
// finite-difference gradient oracle.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtdnn/core.hpp"
#include "dtdnn/network.hpp"

namespace dtdnn {

enum class DependencyMode { jacobian, perturb };

DependencyMode parse_dependency_mode(const std::string& s);

/// bits(i, j) = 1 when output frame i depends on input frame j.
struct DependencyMap {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> bits;

  Index rows() const { return bits.rows(); }
  Index cols() const { return bits.cols(); }
  bool depends(Index i, Index j) const { return bits(i, j) != 0; }
  bool operator==(const DependencyMap& o) const { return bits == o.bits; }
};

// Frames outside the receptive field produce exact zeros in both modes, so the
// thresholds only need to sit below the weakest real dependency. The perturb
// threshold is the Jacobian one scaled by the jitter size.
inline constexpr double kJacobianThreshold = 1e-12;
inline constexpr double kPerturbScale = 1e-3;
inline constexpr double kPerturbThreshold = kPerturbScale * kJacobianThreshold;

/// Jacobian mode backpropagates a random direction from each output frame and
/// marks inputs whose gradient exceeds kJacobianThreshold. Perturb mode
/// jitters one input frame at a time by kPerturbScale * N(0, 1) and marks
/// outputs that move by more than kPerturbThreshold. Offsets are whatever the
/// network predicts on `probe`.
DependencyMap dependency_map(const Network& net, const FeatureSeqd& probe,
                             DependencyMode mode);

// Probe drawn from N(0, 1) with the given seed.
DependencyMap dependency_map(const Network& net, Index length, DependencyMode mode,
                             std::uint64_t probe_seed = 0);

struct Lookahead {
  std::vector<Index> per_output;  // max(j) - i * stride_product, floored at 0
  Index max = 0;
};

Lookahead lookahead(const DependencyMap& map, Index stride_product);

struct Envelope {
  std::vector<Index> lo;  // -1 for rows with no dependency
  std::vector<Index> hi;
  bool monotone = true;   // lo and hi nondecreasing over non-empty rows
};

Envelope envelope(const DependencyMap& map);

// One row per output frame, one 0/1 column per input frame.
std::string rf_map_csv(const DependencyMap& map);

struct OffsetHistogram {
  Index layer_index = 0;  // 1-based
  double bin_width = 0.25;
  std::vector<double> bin_edges;  // counts.size() + 1 entries
  std::vector<long long> counts;
  long long total = 0;
  double fraction_nonpositive = 0.0;
};

/// Pools the used offsets of every deformable layer over `inputs`. Bins are
/// [k * w, (k + 1) * w).
std::vector<OffsetHistogram> offset_histogram(const Network& net,
                                              const std::vector<FeatureSeqd>& inputs,
                                              double bin_width = 0.25);

// Columns bin_lo, bin_hi, count, layer_index.
std::string offsets_hist_csv(const std::vector<OffsetHistogram>& hists);

/// One parameter group for grad_check: the live storage the closure reads
/// and the analytic gradient to compare against.
struct GradCheckGroup {
  std::string name;
  std::span<double> params;
  Eigen::VectorXd analytic;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  Index probes = 0;
  bool pass = false;
};

struct GradCheckReport {
  double eps = 0.0;
  double tol = 0.0;
  std::vector<GradCheckEntry> groups;
  bool pass = true;

  std::string json() const;
};

/// Central differences of `loss` per coordinate, or along `directions` random
/// unit-variance directions for groups larger than `max_coords`. Relative
/// error is |a - n| / max(|a|, |n|, 1e-12). Parameters are restored exactly.
GradCheckReport grad_check(const std::function<double()>& loss,
                           std::vector<GradCheckGroup> groups, double eps,
                           double tol, std::uint64_t seed = 0,
                           Index max_coords = 64, Index directions = 24);

/// Runs the oracle over every backward pass in the library: standard and
/// deformable convolution, interpolation, latency clip, offset predictor,
/// frame loss, and the full network built from `mini`.
GradCheckReport gradcheck_suite(const NetworkConfig& mini, std::uint64_t seed = 0,
                                double eps = 1e-5, double tol = 1e-4);

}  // namespace dtdnn
