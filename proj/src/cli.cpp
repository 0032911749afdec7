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

#include "dtdnn/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "dtdnn/analysis.hpp"
#include "dtdnn/checkpoint.hpp"
#include "dtdnn/errors.hpp"
#include "dtdnn/feature_io.hpp"
#include "dtdnn/train.hpp"
#include "json.hpp"

namespace dtdnn {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_mini_config() {
  const fs::path local = "configs/mini.cfg";
  if (fs::exists(local)) return local.string();
  return (fs::path(DTDNN_SOURCE_DIR) / "configs" / "mini.cfg").string();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw RuntimeFailure("failed writing '" + path.string() + "'");
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw UsageError("--out: cannot create directory '" + dir + "'");
  }
  return fs::path(dir);
}

void write_run_json(const fs::path& path, const std::string& subcommand,
                    const json& args, const std::string& config_text,
                    std::uint64_t seed) {
  json j;
  j["tool"] = "dtdnn";
  j["version"] = DTDNN_VERSION;
  j["subcommand"] = subcommand;
  j["args"] = args;
  j["seed"] = seed;
  j["config"] = config_text;
  write_file(path, j.dump(2) + "\n");
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deformable TDNN layers: gradient checks, training, and analysis", "dtdnn"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", DTDNN_VERSION);

  // gradcheck
  std::string gc_config = default_mini_config(), gc_out = ".";
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference oracle over every backward pass");
  gradcheck->add_option("--config", gc_config, "Network config for the full-network check");
  gradcheck->add_option("--out", gc_out, "Output directory");
  gradcheck->add_option("--seed", gc_seed, "Seed for probe points");
  gradcheck->add_option("--eps", gc_eps, "Central-difference step");
  gradcheck->add_option("--tol", gc_tol, "Relative error tolerance");

  // train
  std::string tr_config, tr_out;
  bool tr_clip = false;
  auto* train = app.add_subcommand("train", "Train on the synthetic warped-sequence task");
  train->add_option("--config", tr_config, "Experiment config")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_flag("--clip", tr_clip, "Latency-controlled offsets in training and evaluation");

  // analyze-rf
  std::string rf_ckpt, rf_config, rf_out, rf_mode = "both";
  Index rf_length = 0;
  std::uint64_t rf_seed = 0;
  auto* rf = app.add_subcommand("analyze-rf", "Receptive-field dependency map and lookahead");
  auto* rf_ckpt_opt = rf->add_option("--ckpt", rf_ckpt, "Checkpoint to analyze");
  auto* rf_cfg_opt = rf->add_option("--config", rf_config, "Network config (fresh weights) instead of a checkpoint");
  rf_ckpt_opt->excludes(rf_cfg_opt);
  rf->add_option("--length", rf_length, "Probe length in input frames")->required()->check(CLI::PositiveNumber);
  rf->add_option("--out", rf_out, "Output directory")->required();
  rf->add_option("--mode", rf_mode, "jacobian, perturb, or both")->check(CLI::IsMember({"jacobian", "perturb", "both"}));
  rf->add_option("--seed", rf_seed, "Probe seed");

  // analyze-offsets
  std::string of_ckpt, of_config, of_out;
  double of_bin = 0.25;
  Index of_sequences = 32;
  auto* offsets = app.add_subcommand("analyze-offsets", "Histogram of predicted offsets");
  offsets->add_option("--ckpt", of_ckpt, "Checkpoint to analyze")->required();
  offsets->add_option("--config", of_config, "Experiment config supplying the task")->required();
  offsets->add_option("--out", of_out, "Output directory")->required();
  offsets->add_option("--bin-width", of_bin, "Histogram bin width in frames")->check(CLI::PositiveNumber);
  offsets->add_option("--sequences", of_sequences, "Held-out sequences to pool")->check(CLI::PositiveNumber);

  // warp
  std::string wp_in, wp_out;
  double wp_W = 0.0;
  std::uint64_t wp_seed = 0;
  auto* warp = app.add_subcommand("warp", "Time-warp an FSEQ feature file");
  warp->add_option("--in", wp_in, "Input FSEQ file")->required();
  warp->add_option("--out", wp_out, "Output FSEQ file")->required();
  warp->add_option("--W", wp_W, "Time warp parameter (max displacement, frames)")->required();
  warp->add_option("--seed", wp_seed, "Warp seed");

  // compare
  std::string cmp_config, cmp_out;
  auto* compare = app.add_subcommand("compare", "Paired standard vs deformable protocol");
  compare->add_option("--config", cmp_config, "Experiment config")->required();
  compare->add_option("--out", cmp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << DTDNN_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dtdnn: error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gradcheck->parsed()) {
      const NetworkConfig cfg = load_network_config(gc_config);
      const fs::path dir = prepare_dir(gc_out);
      const GradCheckReport rep = gradcheck_suite(cfg, gc_seed, gc_eps, gc_tol);
      write_file(dir / "gradcheck.json", rep.json());
      write_run_json(dir / "run.json", "gradcheck",
                     {{"config", gc_config}, {"out", gc_out}, {"seed", gc_seed},
                      {"eps", gc_eps}, {"tol", gc_tol}},
                     serialize_network_config(cfg), gc_seed);
      for (const GradCheckEntry& e : rep.groups) {
        out << (e.pass ? "PASS " : "FAIL ") << e.name << " max_rel_error=" << fmt(e.max_rel_error) << "\n";
      }
      if (!rep.pass) throw RuntimeFailure("gradient check failed");
      return 0;
    }

    if (train->parsed()) {
      ExperimentConfig cfg = load_experiment_config(tr_config);
      if (tr_clip) cfg.network = cfg.network.with_clip(ClipMode::latency_controlled);
      const fs::path dir = prepare_dir(tr_out);
      const TrainOutcome res = train_network(cfg);
      write_file(dir / "report.json", report_json(res.report));
      write_file(dir / "metrics.csv", metrics_csv(res.report));
      save_checkpoint(res.network, (dir / "model.ckpt").string());
      write_run_json(dir / "run.json", "train",
                     {{"config", tr_config}, {"out", tr_out}, {"clip", tr_clip}},
                     serialize_experiment_config(cfg), cfg.train_seed);
      err << "dtdnn: trained " << res.report.steps.size() << " steps in "
          << fmt(res.report.wall_time_s) << " s\n";
      if (res.report.diverged) throw RuntimeFailure(res.report.message);
      return 0;
    }

    if (rf->parsed()) {
      if (rf_ckpt.empty() == rf_config.empty()) {
        throw UsageError("analyze-rf: exactly one of --ckpt or --config is required");
      }
      const Network net = rf_ckpt.empty() ? build_network(load_network_config(rf_config))
                                          : load_checkpoint(rf_ckpt);
      const fs::path dir = prepare_dir(rf_out);
      json summary;
      std::optional<DependencyMap> jac, per;
      if (rf_mode != "perturb") jac = dependency_map(net, rf_length, DependencyMode::jacobian, rf_seed);
      if (rf_mode != "jacobian") per = dependency_map(net, rf_length, DependencyMode::perturb, rf_seed);
      const DependencyMap& main = jac ? *jac : *per;
      write_file(dir / "rf_map.csv", rf_map_csv(main));
      if (jac && per) {
        write_file(dir / "rf_map_perturb.csv", rf_map_csv(*per));
        summary["oracles_agree"] = (*jac == *per);
      }
      const Lookahead la = lookahead(main, net.stride_product());
      const Envelope env = envelope(main);
      summary["rows"] = main.rows();
      summary["cols"] = main.cols();
      summary["stride_product"] = net.stride_product();
      summary["max_lookahead"] = la.max;
      summary["per_output_lookahead"] = la.per_output;
      summary["monotone_envelope"] = env.monotone;
      write_file(dir / "rf_summary.json", summary.dump(2) + "\n");
      write_run_json(dir / "run.json", "analyze-rf",
                     {{"ckpt", rf_ckpt}, {"config", rf_config}, {"length", rf_length},
                      {"out", rf_out}, {"mode", rf_mode}, {"seed", rf_seed}},
                     serialize_network_config(net.config()), rf_seed);
      out << "max lookahead " << la.max << " input frames\n";
      if (jac && per && !(*jac == *per)) {
        throw RuntimeFailure("jacobian and perturbation dependency maps disagree");
      }
      return 0;
    }

    if (offsets->parsed()) {
      const ExperimentConfig cfg = load_experiment_config(of_config);
      const Network net = load_checkpoint(of_ckpt);
      if (net.input_dim() != cfg.task.feature_dim) {
        throw UsageError("analyze-offsets: checkpoint input_dim does not match the task feature_dim");
      }
      const fs::path dir = prepare_dir(of_out);
      Rng rng(cfg.eval_seed);
      const Batch batch = generate_batch(cfg.task, of_sequences, rng);
      const auto hists = offset_histogram(net, batch.features, of_bin);
      write_file(dir / "offsets_hist.csv", offsets_hist_csv(hists));
      write_run_json(dir / "run.json", "analyze-offsets",
                     {{"ckpt", of_ckpt}, {"config", of_config}, {"out", of_out},
                      {"bin_width", of_bin}, {"sequences", of_sequences}},
                     serialize_experiment_config(cfg), cfg.eval_seed);
      for (const OffsetHistogram& h : hists) {
        out << "layer " << h.layer_index << ": " << h.total << " offsets, "
            << fmt(100.0 * h.fraction_nonpositive) << "% non-positive\n";
      }
      return 0;
    }

    if (warp->parsed()) {
      const FeatureSeqd x = read_fseq(wp_in);
      Rng rng(wp_seed);
      WarpSpec spec;
      const FeatureSeqd y = time_warp(x, wp_W, rng, &spec);
      write_fseq(y, wp_out);
      write_run_json(wp_out + ".run.json", "warp",
                     {{"in", wp_in}, {"out", wp_out}, {"W", wp_W}, {"seed", wp_seed},
                      {"anchor", spec.anchor}, {"shift", spec.shift}},
                     "", wp_seed);
      return 0;
    }

    if (compare->parsed()) {
      const ExperimentConfig cfg = load_experiment_config(cmp_config);
      const fs::path dir = prepare_dir(cmp_out);
      const auto start = std::chrono::steady_clock::now();
      const ComparisonReport rep = run_comparison(cfg);
      for (const TrainReport* r : {&rep.standard, &rep.deformable, &rep.deformable_clipped}) {
        const fs::path sub = prepare_dir((dir / r->name).string());
        write_file(sub / "report.json", report_json(*r));
        write_file(sub / "metrics.csv", metrics_csv(*r));
      }
      write_file(dir / "compare.json", comparison_json(rep));
      write_run_json(dir / "run.json", "compare",
                     {{"config", cmp_config}, {"out", cmp_out}},
                     serialize_experiment_config(cfg), cfg.train_seed);
      const auto s = rep.summary();
      out << "median eval loss at W=" << rep.largest_warp << ": standard "
          << fmt(s.standard_warped) << ", deformable " << fmt(s.deformable_warped) << "\n";
      out << "clean: standard " << fmt(s.standard_clean) << ", deformable "
          << fmt(s.deformable_clean) << "\n";
      out << "latency: train/test none " << fmt(s.unconstrained) << ", none/clip "
          << fmt(s.clip_test_only) << ", clip/clip " << fmt(s.clip_train_test) << "\n";
      err << "dtdnn: compare finished in "
          << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count())
          << " s\n";
      for (const TrainReport* r : {&rep.standard, &rep.deformable, &rep.deformable_clipped}) {
        if (r->diverged) throw RuntimeFailure(r->name + ": " + r->message);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "dtdnn: error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    err << "dtdnn: error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointError& e) {
    err << "dtdnn: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "dtdnn: error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dtdnn
