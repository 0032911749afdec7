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

// Synthetic warped-sequence task, time warping, frame loss, Adam, and the
// experiment loop.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dtdnn/config.hpp"
#include "dtdnn/core.hpp"
#include "dtdnn/network.hpp"

namespace dtdnn {

/// Segment-labelling task. A sequence is a run of segments, each with a class
/// and a duration drawn from [d_min, d_max]; every frame is the class
/// embedding plus N(0, noise^2) noise. Labels are emitted once per output
/// frame (every `stride` input frames) as the majority class of the window
/// centred on that frame.
struct TaskSpec {
  Index num_classes = 2;
  Index feature_dim = 1;
  Index d_min = 1;
  Index d_max = 1;
  Index length = 1;
  double noise = 0.0;
  std::uint64_t embedding_seed = 0;
  Index stride = 1;

  void validate() const;
  // feature_dim x num_classes, a pure function of embedding_seed.
  FeatureSeqd embeddings() const;
};

struct Batch {
  std::vector<FeatureSeqd> features;
  std::vector<std::vector<int>> labels;        // output rate
  std::vector<std::vector<int>> frame_classes; // input rate
  std::vector<Index> lengths;

  std::size_t size() const { return features.size(); }
};

Batch generate_batch(const TaskSpec& spec, Index batch_size, Rng& rng);

// Majority class of each output window; ties go to the centre frame.
std::vector<int> frame_labels(const std::vector<int>& frame_classes,
                              Index stride, Index num_classes);

/// A realised single-anchor warp: the frame at `anchor` moves to
/// `anchor + shift` and the map stays linear on either side, fixing both ends.
struct WarpSpec {
  double W = 0.0;
  double anchor = 0.0;
  double shift = 0.0;  // signed displacement, |shift| <= W

  // Source position sampled by output frame t.
  double source(double t, Index length) const;
};

WarpSpec draw_warp(Index length, double W, Rng& rng);
FeatureSeqd apply_warp(const FeatureSeqd& x, const WarpSpec& w);

// Draws a warp and applies it; W = 0 returns x unchanged.
FeatureSeqd time_warp(const FeatureSeqd& x, double W, Rng& rng,
                      WarpSpec* realised = nullptr);

// Nearest-frame resampling of an input-rate class track under a warp.
std::vector<int> warp_classes(const std::vector<int>& classes, const WarpSpec& w);

struct LossResult {
  double loss = 0.0;
  FeatureSeqd grad_logits;
  Index correct = 0;
};

/// Mean softmax cross-entropy over frames and its gradient.
LossResult frame_ce_loss(const FeatureSeqd& logits, const std::vector<int>& labels);

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  long long step = 0;
  std::map<std::string, Eigen::MatrixXd> m;
  std::map<std::string, Eigen::MatrixXd> v;
};

// One Adam update. Parameters without a gradient are left untouched.
void optimizer_step(std::vector<ParamView>& params,
                    const std::map<std::string, Eigen::MatrixXd>& grads,
                    AdamState& state, const AdamHyper& hyper);

struct ExperimentConfig {
  std::string network_path;  // as written in the experiment file
  NetworkConfig network;
  TaskSpec task;
  AdamHyper adam;
  Index steps = 0;
  Index batch_size = 8;
  Index eval_interval = 0;  // 0: evaluate only before and after training
  Index eval_sequences = 32;
  std::uint64_t train_seed = 1;
  std::uint64_t eval_seed = 1000;
  Index warp_seeds = 10;
  std::vector<double> eval_warps{0.0};
  double train_warp = 0.0;  // consistent (features + labels) augmentation
  std::vector<ClipMode> eval_clip_modes;  // empty: the training clip mode
  Index compare_deformable_k = 2;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& base_dir = ".");
ExperimentConfig load_experiment_config(const std::string& path);
std::string serialize_experiment_config(const ExperimentConfig& cfg);

struct StepRecord {
  Index step = 0;
  double loss = 0.0;
  double frame_acc = 0.0;
};

struct EvalRecord {
  Index step = 0;
  std::string split;
  double warp_W = 0.0;
  ClipMode clip_mode = ClipMode::none;
  double loss = 0.0;
  double frame_acc = 0.0;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::string name;
  ClipMode train_clip = ClipMode::none;
  Index deformable_layers = 0;
  std::uint64_t train_seed = 0;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  bool diverged = false;
  std::string message;
  double wall_time_s = 0.0;  // not serialized

  // Median eval loss over warp seeds at the last evaluated step.
  double median_eval_loss(double warp_W, ClipMode clip) const;
};

std::string report_json(const TrainReport& r);
std::string metrics_csv(const TrainReport& r);

struct TrainOutcome {
  TrainReport report;
  Network network;
};

// Evaluates `net` on the held-out set under every warp and clip setting.
std::vector<EvalRecord> evaluate(const Network& net, const ExperimentConfig& cfg,
                                 Index step, const std::vector<ClipMode>& clips);

TrainOutcome train_network(const ExperimentConfig& cfg);
TrainReport train_run(const ExperimentConfig& cfg);

/// Paired protocol: a standard network, a deformable network trained without
/// the latency clip, and one trained with it, from identical seeds.
struct ComparisonReport {
  TrainReport standard;
  TrainReport deformable;
  TrainReport deformable_clipped;
  double largest_warp = 0.0;

  struct Summary {
    double standard_clean = 0, deformable_clean = 0;
    double standard_warped = 0, deformable_warped = 0;
    double unconstrained = 0;      // train none / test none
    double clip_test_only = 0;     // train none / test clip
    double clip_train_test = 0;    // train clip / test clip
  };
  Summary summary() const;
};

ComparisonReport run_comparison(const ExperimentConfig& cfg);
std::string comparison_json(const ComparisonReport& r);

}  // namespace dtdnn
