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

#include <cmath>

#include "doctest.h"
#include "dtdnn/train.hpp"
#include "oracles.hpp"

using namespace dtdnn;
using Mat = Eigen::MatrixXd;

namespace {

TaskSpec spec(Index K, Index d_min, Index d_max, Index T, double noise, Index stride) {
  TaskSpec s;
  s.num_classes = K;
  s.feature_dim = 4;
  s.d_min = d_min;
  s.d_max = d_max;
  s.length = T;
  s.noise = noise;
  s.embedding_seed = 2;
  s.stride = stride;
  return s;
}

const char* kTinyExperiment = R"(
experiment
{
    network
    {
        input_dim 4
        hidden_dim 6
        output_dim 3
        seed 5
        deformable_last_k 1
        layers
        {
            layer { kernel_size 3 dilation 1 stride 1 }
            layer { kernel_size 3 dilation 1 stride 3 }
        }
    }
    steps 6
    batch_size 2
    learning_rate 0.01
    eval_interval 3
    eval_sequences 3
    warp_seeds 2
    eval_warps "0 2"
    task
    {
        num_classes 3
        d_min 3
        d_max 8
        length 24
        noise 0.3
        embedding_seed 1
    }
}
)";

}  // namespace

TEST_CASE("generate_batch examples") {
  Rng rng(1);
  const Batch one = generate_batch(spec(1, 2, 5, 30, 0.0, 3), 3, rng);
  for (std::size_t b = 0; b < one.size(); ++b) {
    const Mat& x = one.features[b];
    CHECK(x.cols() == 30);
    for (Index t = 1; t < x.cols(); ++t) CHECK((x.col(t).array() == x.col(0).array()).all());
    CHECK(one.labels[b].size() == 10);
    for (int l : one.labels[b]) CHECK(l == 0);
  }

  Rng a(7), b(7);
  const Batch ba = generate_batch(spec(5, 2, 9, 40, 0.5, 3), 4, a);
  const Batch bb = generate_batch(spec(5, 2, 9, 40, 0.5, 3), 4, b);
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK((ba.features[i].array() == bb.features[i].array()).all());
    CHECK(ba.labels[i] == bb.labels[i]);
  }

  Rng c(11);
  CHECK_THROWS_AS(generate_batch(spec(3, 10, 12, 8, 0.1, 1), 1, c), UsageError);
}

TEST_CASE("fixed-duration segments change label every two output frames") {
  Rng rng(3);
  const Batch batch = generate_batch(spec(6, 6, 6, 60, 0.0, 3), 5, rng);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& labels = batch.labels[b];
    REQUIRE(labels.size() == 20);
    for (std::size_t i = 1; i < labels.size(); ++i) {
      if (labels[i] != labels[i - 1]) CHECK(i % 2 == 0);
    }
    for (std::size_t i = 0; i < labels.size(); i += 2) CHECK(labels[i] == batch.frame_classes[b][3 * i]);
  }
}

TEST_CASE("frame_labels majority with centre tie-break") {
  CHECK(frame_labels({0, 0, 1, 1, 1, 2}, 3, 3) == std::vector<int>{0, 1});
  CHECK(frame_labels({2, 1, 0}, 1, 3) == std::vector<int>{2, 1, 0});
  // Window of output 0 covers frames {0, 1}: a tie resolves to frame 0.
  CHECK(frame_labels({1, 2, 2, 0, 0}, 3, 3) == std::vector<int>{1, 0});
}

TEST_CASE("time_warp examples") {
  Rng rng(4);
  const Mat x = random_normal<double>(3, 25, rng);
  Rng r0(9);
  const Mat same = time_warp(x, 0.0, r0);
  CHECK((same.array() == x.array()).all());

  Mat ramp(1, 40);
  for (Index t = 0; t < 40; ++t) ramp(0, t) = static_cast<double>(t);
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng r(s);
    WarpSpec w;
    const Mat y = time_warp(ramp, 8.0, r, &w);
    CHECK(y(0, 0) == doctest::Approx(0.0));
    CHECK(y(0, 39) == doctest::Approx(39.0));
    CHECK(std::abs(w.shift) <= 8.0);
    CHECK(w.anchor >= 8.0);
    CHECK(w.anchor <= 31.0);
    // Piecewise linear with a single kink near the warped anchor.
    Index kinks = 0;
    for (Index t = 1; t + 1 < 40; ++t) {
      if (std::abs(y(0, t + 1) - 2 * y(0, t) + y(0, t - 1)) > 1e-9) ++kinks;
    }
    CHECK(kinks <= 2);
    for (Index t = 1; t < 40; ++t) CHECK(y(0, t) >= y(0, t - 1));
  }

  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng r(100 + s);
    const Mat y = time_warp(x, 6.0, r);
    for (Index c = 0; c < x.rows(); ++c) {
      CHECK(y.row(c).maxCoeff() <= x.row(c).maxCoeff() + 1e-12);
      CHECK(y.row(c).minCoeff() >= x.row(c).minCoeff() - 1e-12);
    }
  }

  Rng bad(1);
  CHECK_THROWS_AS(time_warp(x, 12.5, bad), UsageError);
  CHECK_THROWS_AS(time_warp(x, -1.0, bad), UsageError);
  CHECK_THROWS_AS(time_warp(Mat::Zero(2, 2), 0.5, bad), UsageError);
}

TEST_CASE("frame_ce_loss examples") {
  const LossResult u = frame_ce_loss(Mat::Zero(4, 5), {0, 1, 2, 3, 0});
  CHECK(u.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Mat big = Mat::Constant(3, 2, -500.0);
  big(1, 0) = 500.0;
  big(2, 1) = 500.0;
  const LossResult sure = frame_ce_loss(big, {1, 2});
  CHECK(sure.loss < 1e-12);
  CHECK(sure.correct == 2);

  Rng rng(6);
  Mat logits = random_normal<double>(4, 7, rng, 2.0);
  const std::vector<int> labels{0, 3, 1, 1, 2, 0, 3};
  const LossResult r = frame_ce_loss(logits, labels);
  const Mat numeric =
      oracle::central_diff([&] { return frame_ce_loss(logits, labels).loss; }, logits, 1e-5);
  CHECK(oracle::max_rel_err(r.grad_logits, numeric) < 1e-6);

  CHECK_THROWS_AS(frame_ce_loss(Mat::Zero(3, 2), {0, 3}), UsageError);
  CHECK_THROWS_AS(frame_ce_loss(Mat::Zero(3, 2), {0}), UsageError);
}

TEST_CASE("optimizer_step examples") {
  Mat w = Mat::Constant(1, 1, 2.0);
  std::vector<ParamView> params{{"w", Eigen::Map<Mat>(w.data(), 1, 1)}};
  AdamState state;
  AdamHyper hyper;
  hyper.learning_rate = 0.1;

  optimizer_step(params, {{"w", Mat::Zero(1, 1)}}, state, hyper);
  CHECK(w(0, 0) == 2.0);
  CHECK(state.step == 1);

  AdamState fresh;
  optimizer_step(params, {{"w", Mat::Constant(1, 1, 1.0)}}, fresh, hyper);
  CHECK(w(0, 0) == doctest::Approx(2.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));

  Mat bad = Mat::Constant(1, 1, std::nan(""));
  const double before = w(0, 0);
  try {
    optimizer_step(params, {{"w", bad}}, fresh, hyper);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK(w(0, 0) == before);
}

TEST_CASE("experiment config parsing") {
  const ExperimentConfig cfg = parse_experiment_config(kTinyExperiment);
  CHECK(cfg.steps == 6);
  CHECK(cfg.task.feature_dim == 4);
  CHECK(cfg.task.stride == 3);
  CHECK(cfg.eval_warps == std::vector<double>{0.0, 2.0});
  const ExperimentConfig again =
      parse_experiment_config(serialize_experiment_config(cfg));
  CHECK(serialize_experiment_config(again) == serialize_experiment_config(cfg));
  CHECK_THROWS_AS(parse_experiment_config("experiment { steps 3 }"), ConfigError);
  std::string wrong = kTinyExperiment;
  wrong.replace(wrong.find("num_classes 3"), 13, "num_classes 5");
  CHECK_THROWS_AS(parse_experiment_config(wrong), ConfigError);
}

TEST_CASE("training is deterministic and steps=0 only evaluates") {
  const ExperimentConfig cfg = parse_experiment_config(kTinyExperiment);
  const TrainReport a = train_run(cfg);
  const TrainReport b = train_run(cfg);
  CHECK(report_json(a) == report_json(b));
  CHECK(metrics_csv(a) == metrics_csv(b));
  CHECK(a.steps.size() == 6);
  CHECK_FALSE(a.diverged);

  ExperimentConfig none = cfg;
  none.steps = 0;
  const TrainReport z = train_run(none);
  CHECK(z.steps.empty());
  REQUIRE_FALSE(z.evals.empty());
  for (const EvalRecord& e : z.evals) CHECK(e.step == 0);
  // W=0 once plus warp_seeds repeats of W=2.
  CHECK(z.evals.size() == 3);
}

TEST_CASE("warped evaluation at W=0 equals clean evaluation") {
  ExperimentConfig cfg = parse_experiment_config(kTinyExperiment);
  cfg.steps = 0;
  const Network net = build_network(cfg.network);
  const auto evals = evaluate(net, cfg, 0, {ClipMode::none});
  ExperimentConfig clean = cfg;
  clean.eval_warps = {0.0};
  const auto evals0 = evaluate(net, clean, 0, {ClipMode::none});
  CHECK(evals.front().loss == evals0.front().loss);
}

TEST_CASE("standard and deformable start from identical eval loss") {
  ExperimentConfig cfg = parse_experiment_config(kTinyExperiment);
  cfg.steps = 0;
  ExperimentConfig standard = cfg;
  standard.network = cfg.network.with_deformable_last_k(0);
  const TrainReport d = train_run(cfg);
  const TrainReport s = train_run(standard);
  REQUIRE(d.evals.size() == s.evals.size());
  for (std::size_t i = 0; i < d.evals.size(); ++i) CHECK(d.evals[i].loss == s.evals[i].loss);
}

TEST_CASE("report serialization") {
  const TrainReport r = train_run(parse_experiment_config(kTinyExperiment));
  const std::string csv = metrics_csv(r);
  CHECK(csv.rfind("step,split,warp_W,clip_mode,loss,frame_acc,seed\n", 0) == 0);
  const std::size_t lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
  CHECK(lines == 1 + r.steps.size() + r.evals.size());
  const std::string json = report_json(r);
  CHECK(json.find("\"eval\"") != std::string::npos);
  CHECK(json.find("wall") == std::string::npos);
}
