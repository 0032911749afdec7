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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dtdnn/cli.hpp"
#include "dtdnn/feature_io.hpp"
#include "dtdnn/train.hpp"

using namespace dtdnn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "dtdnn");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dtdnn_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

bool single_line(const std::string& s) {
  return !s.empty() && s.back() == '\n' && s.find('\n') == s.size() - 1;
}

const char* kNetwork = R"(
network
{
    input_dim 4
    hidden_dim 5
    output_dim 3
    seed 2
    deformable_last_k 1
    layers
    {
        layer { kernel_size 3 dilation 1 stride 1 }
        layer { kernel_size 3 dilation 1 stride 3 }
    }
}
)";

const char* kExperiment = R"(
experiment
{
    network net.cfg
    steps 4
    batch_size 2
    eval_interval 2
    eval_sequences 2
    warp_seeds 2
    eval_warps "0 2"
    task { d_min 3 d_max 6 length 18 noise 0.2 embedding_seed 4 }
}
)";

}  // namespace

TEST_CASE("cli help, usage errors and exit codes") {
  const Result help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("train") != std::string::npos);
  const Result train_help = run({"gradcheck", "--help"});
  CHECK(train_help.code == 0);
  CHECK(train_help.out.find("1e-05") != std::string::npos);

  const Result none = run({});
  CHECK(none.code == 1);
  CHECK(single_line(none.err));
  CHECK(run({"bogus"}).code == 1);
  CHECK(run({"train", "--config", "x.cfg"}).code == 1);

  const Result missing = run({"train", "--config", "/nonexistent/x.cfg", "--out", "/tmp"});
  CHECK(missing.code == 1);
  CHECK(single_line(missing.err));
  CHECK(missing.err.find("/nonexistent/x.cfg") != std::string::npos);

  const fs::path dir = scratch("badcfg");
  write(dir / "bad.cfg", "network { input_dim 3 output_dim 2 layers { layer { kernel_size 4 } } }");
  const Result bad = run({"analyze-rf", "--config", (dir / "bad.cfg").string(), "--length", "9",
                          "--out", dir.string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("layer 1") != std::string::npos);
}

TEST_CASE("cli analyze-rf on the table1 config") {
  const fs::path dir = scratch("rf_table1");
  const Result r = run({"analyze-rf", "--config", std::string(DTDNN_SOURCE_DIR) + "/configs/table1.cfg",
                        "--length", "90", "--out", dir.string(), "--mode", "jacobian"});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir / "rf_map.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 30);
  const std::string first = csv.substr(0, csv.find('\n'));
  CHECK(std::count(first.begin(), first.end(), ',') == 89);
  CHECK(r.out.find("35") != std::string::npos);
}

TEST_CASE("cli warp") {
  const fs::path dir = scratch("warp");
  Rng rng(1);
  const FeatureSeqd x = random_normal<double>(3, 20, rng);
  write_fseq(x, (dir / "x.fseq").string());
  const Result zero = run({"warp", "--in", (dir / "x.fseq").string(), "--out",
                           (dir / "y.fseq").string(), "--W", "0", "--seed", "3"});
  CHECK(zero.code == 0);
  CHECK((read_fseq((dir / "y.fseq").string()).array() == x.array()).all());
  CHECK(run({"warp", "--in", (dir / "x.fseq").string(), "--out", (dir / "z.fseq").string(),
             "--W", "4"}).code == 0);
  CHECK(read_fseq((dir / "z.fseq").string()).cols() == 20);
  CHECK(run({"warp", "--in", (dir / "x.fseq").string(), "--out", (dir / "z.fseq").string(),
             "--W", "10"}).code == 1);
  CHECK(run({"warp", "--in", (dir / "missing.fseq").string(), "--out",
             (dir / "z.fseq").string(), "--W", "1"}).code == 1);
}

TEST_CASE("cli train, analyze and determinism") {
  const fs::path dir = scratch("train");
  write(dir / "net.cfg", kNetwork);
  write(dir / "exp.cfg", kExperiment);
  const std::string cfg = (dir / "exp.cfg").string();

  const std::vector<std::string> files{"report.json", "metrics.csv", "model.ckpt", "run.json"};
  REQUIRE(run({"train", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
  std::vector<std::string> first;
  for (const std::string& f : files) first.push_back(slurp(dir / "a" / f));
  REQUIRE(run({"train", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
  for (std::size_t i = 0; i < files.size(); ++i) {
    INFO(files[i]);
    CHECK_FALSE(first[i].empty());
    CHECK(slurp(dir / "a" / files[i]) == first[i]);
  }
  CHECK(slurp(dir / "a" / "run.json").find("\"seed\"") != std::string::npos);

  REQUIRE(run({"train", "--config", cfg, "--out", (dir / "c").string(), "--clip"}).code == 0);
  CHECK(slurp(dir / "c" / "report.json").find("latency_controlled") != std::string::npos);

  const Result rf = run({"analyze-rf", "--ckpt", (dir / "a" / "model.ckpt").string(),
                         "--length", "24", "--out", (dir / "rf").string()});
  CHECK(rf.code == 0);
  CHECK(fs::exists(dir / "rf" / "rf_map.csv"));
  CHECK(slurp(dir / "rf" / "rf_summary.json").find("\"oracles_agree\": true") != std::string::npos);

  const Result offsets = run({"analyze-offsets", "--ckpt", (dir / "a" / "model.ckpt").string(),
                              "--config", cfg, "--out", (dir / "off").string()});
  CHECK(offsets.code == 0);
  CHECK(fs::exists(dir / "off" / "offsets_hist.csv"));

  const Result gc = run({"gradcheck", "--config", (dir / "net.cfg").string(), "--out",
                         (dir / "gc").string()});
  CHECK(gc.code == 0);
  CHECK(slurp(dir / "gc" / "gradcheck.json").find("\"pass\": true") != std::string::npos);
}
