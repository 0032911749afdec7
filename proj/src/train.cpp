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

#include "dtdnn/train.hpp"

#include <boost/property_tree/info_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>

#include "dtdnn/errors.hpp"
#include "json.hpp"

namespace dtdnn {

namespace pt = boost::property_tree;

// ---------------------------------------------------------------------------
// Task generation

void TaskSpec::validate() const {
  if (num_classes < 1) throw ConfigError("task: num_classes must be >= 1");
  if (feature_dim < 1) throw ConfigError("task: feature_dim must be >= 1");
  if (d_min < 1) throw ConfigError("task: d_min must be >= 1");
  if (d_max < d_min) throw ConfigError("task: d_max must be >= d_min");
  if (length < 1) throw ConfigError("task: length must be >= 1");
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw ConfigError("task: noise must be a finite value >= 0");
  }
  if (stride < 1) throw ConfigError("task: stride must be >= 1");
}

FeatureSeqd TaskSpec::embeddings() const {
  Rng rng(embedding_seed);
  return random_normal<double>(feature_dim, num_classes, rng);
}

std::vector<int> frame_labels(const std::vector<int>& frame_classes, Index stride,
                              Index num_classes) {
  const Index len = static_cast<Index>(frame_classes.size());
  const Index out_len = (len + stride - 1) / stride;
  const Index before = (stride - 1) / 2;
  std::vector<int> labels(static_cast<std::size_t>(out_len));
  std::vector<Index> counts(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < out_len; ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    const Index lo = std::max<Index>(0, i * stride - before);
    const Index hi = std::min<Index>(len, i * stride - before + stride);
    for (Index t = lo; t < hi; ++t) ++counts[frame_classes[t]];
    const int centre = frame_classes[i * stride];
    int best = centre;
    for (int k = 0; k < num_classes; ++k) {
      if (counts[k] > counts[best]) best = k;
    }
    labels[i] = best;
  }
  return labels;
}

Batch generate_batch(const TaskSpec& spec, Index batch_size, Rng& rng) {
  spec.validate();
  if (spec.length < spec.d_min) {
    throw UsageError("task: sequence length " + std::to_string(spec.length) +
                     " is shorter than d_min " + std::to_string(spec.d_min));
  }
  const FeatureSeqd emb = spec.embeddings();
  Batch b;
  for (Index s = 0; s < batch_size; ++s) {
    std::vector<int> classes;
    classes.reserve(static_cast<std::size_t>(spec.length));
    int prev = -1;
    while (static_cast<Index>(classes.size()) < spec.length) {
      int c = static_cast<int>(rng.uniform_int(spec.num_classes));
      while (spec.num_classes > 1 && c == prev) {
        c = static_cast<int>(rng.uniform_int(spec.num_classes));
      }
      const Index dur =
          spec.d_min + static_cast<Index>(rng.uniform_int(spec.d_max - spec.d_min + 1));
      for (Index k = 0; k < dur && static_cast<Index>(classes.size()) < spec.length; ++k) {
        classes.push_back(c);
      }
      prev = c;
    }
    FeatureSeqd x(spec.feature_dim, spec.length);
    for (Index t = 0; t < spec.length; ++t) {
      for (Index ch = 0; ch < spec.feature_dim; ++ch) {
        x(ch, t) = emb(ch, classes[t]) + spec.noise * rng.normal();
      }
    }
    b.labels.push_back(frame_labels(classes, spec.stride, spec.num_classes));
    b.frame_classes.push_back(std::move(classes));
    b.features.push_back(std::move(x));
    b.lengths.push_back(spec.length);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Time warp

double WarpSpec::source(double t, Index length) const {
  const double last = static_cast<double>(length - 1);
  const double dest = anchor + shift;
  if (t <= dest) {
    return dest > 0.0 ? t * anchor / dest : 0.0;
  }
  const double span = last - dest;
  return span > 0.0 ? anchor + (t - dest) * (last - anchor) / span : last;
}

WarpSpec draw_warp(Index length, double W, Rng& rng) {
  if (!(W >= 0.0) || !std::isfinite(W)) {
    throw UsageError("time warp W must be a finite value >= 0");
  }
  if (length < 3) throw UsageError("time warp needs at least 3 frames");
  if (W >= static_cast<double>(length) / 2.0) {
    throw UsageError("time warp W = " + std::to_string(W) +
                     " is degenerate for a sequence of " + std::to_string(length) +
                     " frames (need W < T/2)");
  }
  const double last = static_cast<double>(length - 1);
  double lo = W, hi = last - W;
  if (lo > hi) lo = hi = last / 2.0;
  WarpSpec w;
  w.W = W;
  w.anchor = rng.uniform(lo, hi);
  const double dist = rng.uniform(0.0, W);
  w.shift = rng.coin() ? dist : -dist;
  return w;
}

FeatureSeqd apply_warp(const FeatureSeqd& x, const WarpSpec& w) {
  const Index len = x.cols();
  FeatureSeqd y(x.rows(), len);
  for (Index t = 0; t < len; ++t) {
    const SampleTaps<double> s = sample_taps(w.source(static_cast<double>(t), len));
    for (Index c = 0; c < x.rows(); ++c) {
      double v = read_padded(x, c, s.lo) * s.w_lo;
      if (s.w_hi != 0.0) v += read_padded(x, c, s.lo + 1) * s.w_hi;
      y(c, t) = v;
    }
  }
  return y;
}

FeatureSeqd time_warp(const FeatureSeqd& x, double W, Rng& rng, WarpSpec* realised) {
  const WarpSpec w = draw_warp(x.cols(), W, rng);
  if (realised != nullptr) *realised = w;
  if (w.shift == 0.0) return x;
  return apply_warp(x, w);
}

std::vector<int> warp_classes(const std::vector<int>& classes, const WarpSpec& w) {
  const Index len = static_cast<Index>(classes.size());
  std::vector<int> out(classes.size());
  for (Index t = 0; t < len; ++t) {
    const double s = w.source(static_cast<double>(t), len);
    const Index k = std::clamp<Index>(static_cast<Index>(std::lround(s)), 0, len - 1);
    out[t] = classes[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and optimizer

LossResult frame_ce_loss(const FeatureSeqd& logits, const std::vector<int>& labels) {
  const Index classes = logits.rows(), frames = logits.cols();
  if (static_cast<Index>(labels.size()) != frames) {
    throw UsageError("label length " + std::to_string(labels.size()) +
                     " does not match logits length " + std::to_string(frames));
  }
  LossResult r;
  r.grad_logits.resize(classes, frames);
  double total = 0.0;
  for (Index i = 0; i < frames; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) {
      throw UsageError("label " + std::to_string(y) + " at frame " + std::to_string(i) +
                       " is outside [0, " + std::to_string(classes) + ")");
    }
    Index arg = 0;
    const double mx = logits.col(i).maxCoeff(&arg);
    const Eigen::VectorXd e = (logits.col(i).array() - mx).exp();
    const double z = e.sum();
    total += std::log(z) - (logits(y, i) - mx);
    r.grad_logits.col(i) = e / z;
    r.grad_logits(y, i) -= 1.0;
    if (arg == y) ++r.correct;
  }
  r.loss = total / static_cast<double>(frames);
  r.grad_logits /= static_cast<double>(frames);
  return r;
}

void optimizer_step(std::vector<ParamView>& params,
                    const std::map<std::string, Eigen::MatrixXd>& grads,
                    AdamState& state, const AdamHyper& hyper) {
  for (const ParamView& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw UsageError("gradient for '" + p.name + "' has the wrong shape");
    }
    if (!it->second.allFinite()) {
      throw TrainingError("non-finite gradient for parameter '" + p.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (ParamView& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    const Eigen::MatrixXd& g = it->second;
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.size() == 0) {
      m = Eigen::MatrixXd::Zero(g.rows(), g.cols());
      v = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    }
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.cwiseAbs2();
    p.value.array() -= hyper.learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + hyper.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Experiment config

void ExperimentConfig::validate() const {
  network.validate();
  task.validate();
  if (task.feature_dim != network.input_dim) {
    throw ConfigError("task: feature_dim " + std::to_string(task.feature_dim) +
                      " does not match network input_dim " +
                      std::to_string(network.input_dim));
  }
  if (task.num_classes != network.output_dim) {
    throw ConfigError("task: num_classes " + std::to_string(task.num_classes) +
                      " does not match network output_dim " +
                      std::to_string(network.output_dim));
  }
  if (task.stride != network.stride_product()) {
    throw ConfigError("task: label stride does not match the network stride product");
  }
  if (task.length < task.d_min) {
    throw ConfigError("task: length must be >= d_min");
  }
  if (steps < 0) throw ConfigError("experiment: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("experiment: batch_size must be >= 1");
  if (eval_interval < 0) throw ConfigError("experiment: eval_interval must be >= 0");
  if (eval_sequences < 1) throw ConfigError("experiment: eval_sequences must be >= 1");
  if (warp_seeds < 1) throw ConfigError("experiment: warp_seeds must be >= 1");
  if (!(adam.learning_rate > 0.0)) {
    throw ConfigError("experiment: learning_rate must be positive");
  }
  const double half = static_cast<double>(task.length) / 2.0;
  for (double w : eval_warps) {
    if (!(w >= 0.0) || w >= half) {
      throw ConfigError("experiment: eval_warps entry " + std::to_string(w) +
                        " must lie in [0, length/2)");
    }
  }
  if (!(train_warp >= 0.0) || train_warp >= half) {
    throw ConfigError("experiment: train_warp must lie in [0, length/2)");
  }
  if (compare_deformable_k < 1 ||
      compare_deformable_k > static_cast<Index>(network.layers.size())) {
    throw ConfigError("experiment: compare_deformable_k out of range");
  }
}

namespace {

template <typename T>
T get_or(const pt::ptree& node, const std::string& key, T fallback) {
  auto v = node.get_optional<std::string>(key);
  if (!v) return fallback;
  auto parsed = node.get_optional<T>(key);
  if (!parsed) {
    throw ConfigError("experiment: key '" + key + "' has invalid value '" + *v + "'");
  }
  return *parsed;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& base_dir) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::read_info(in, root);
  } catch (const pt::info_parser_error& e) {
    throw ConfigError("experiment config: parse error at line " +
                      std::to_string(e.line()) + ": " + e.message());
  }
  const pt::ptree* node = &root;
  if (auto child = root.get_child_optional("experiment")) node = &*child;
  const std::set<std::string> allowed{
      "network",       "steps",        "batch_size",      "learning_rate",
      "eval_interval", "eval_sequences", "train_seed",    "eval_seed",
      "warp_seeds",    "eval_warps",   "eval_clip_modes", "train_warp",
      "compare_deformable_k", "task"};
  for (const auto& [key, child] : *node) {
    if (!allowed.count(key)) throw ConfigError("experiment: unknown key '" + key + "'");
  }

  ExperimentConfig cfg;
  auto net = node->get_child_optional("network");
  if (!net) throw ConfigError("experiment: missing required key 'network'");
  if (net->empty()) {
    cfg.network_path = net->data();
    std::filesystem::path p(cfg.network_path);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    cfg.network = load_network_config(p.string());
  } else {
    std::ostringstream sub;
    pt::write_info(sub, *net);
    cfg.network = parse_network_config(sub.str());
  }

  cfg.steps = get_or<Index>(*node, "steps", 0);
  cfg.batch_size = get_or<Index>(*node, "batch_size", 8);
  cfg.adam.learning_rate = get_or<double>(*node, "learning_rate", 1e-3);
  cfg.eval_interval = get_or<Index>(*node, "eval_interval", 0);
  cfg.eval_sequences = get_or<Index>(*node, "eval_sequences", 32);
  cfg.train_seed = get_or<std::uint64_t>(*node, "train_seed", 1);
  cfg.eval_seed = get_or<std::uint64_t>(*node, "eval_seed", 1000);
  cfg.warp_seeds = get_or<Index>(*node, "warp_seeds", 10);
  cfg.train_warp = get_or<double>(*node, "train_warp", 0.0);
  cfg.compare_deformable_k = get_or<Index>(*node, "compare_deformable_k", 2);
  if (auto w = node->get_optional<std::string>("eval_warps")) {
    cfg.eval_warps.clear();
    for (const std::string& s : split_words(*w)) {
      try {
        std::size_t used = 0;
        cfg.eval_warps.push_back(std::stod(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw ConfigError("experiment: eval_warps entry '" + s + "' is not a number");
      }
    }
  }
  if (auto c = node->get_optional<std::string>("eval_clip_modes")) {
    for (const std::string& s : split_words(*c)) {
      try {
        cfg.eval_clip_modes.push_back(parse_clip_mode(s));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("experiment: eval_clip_modes: ") + e.what());
      }
    }
  }

  const pt::ptree empty;
  const pt::ptree& task = node->get_child("task", empty);
  for (const auto& [key, child] : task) {
    static const std::set<std::string> task_keys{
        "num_classes", "d_min", "d_max", "length", "noise", "embedding_seed"};
    if (!task_keys.count(key)) throw ConfigError("task: unknown key '" + key + "'");
  }
  cfg.task.num_classes = get_or<Index>(task, "num_classes", cfg.network.output_dim);
  cfg.task.feature_dim = cfg.network.input_dim;
  cfg.task.d_min = get_or<Index>(task, "d_min", 1);
  cfg.task.d_max = get_or<Index>(task, "d_max", cfg.task.d_min);
  cfg.task.length = get_or<Index>(task, "length", 120);
  cfg.task.noise = get_or<double>(task, "noise", 0.0);
  cfg.task.embedding_seed = get_or<std::uint64_t>(task, "embedding_seed", 0);
  cfg.task.stride = cfg.network.stride_product();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  const std::string text = read_text_file(path);
  const std::string dir = std::filesystem::path(path).parent_path().string();
  try {
    return parse_experiment_config(text, dir.empty() ? "." : dir);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  std::ostringstream o;
  o << "experiment\n{\n";
  o << "    steps " << cfg.steps << "\n";
  o << "    batch_size " << cfg.batch_size << "\n";
  o << "    learning_rate " << fmt_double(cfg.adam.learning_rate) << "\n";
  o << "    eval_interval " << cfg.eval_interval << "\n";
  o << "    eval_sequences " << cfg.eval_sequences << "\n";
  o << "    train_seed " << cfg.train_seed << "\n";
  o << "    eval_seed " << cfg.eval_seed << "\n";
  o << "    warp_seeds " << cfg.warp_seeds << "\n";
  o << "    eval_warps \"";
  for (std::size_t i = 0; i < cfg.eval_warps.size(); ++i) {
    o << (i ? " " : "") << fmt_double(cfg.eval_warps[i]);
  }
  o << "\"\n";
  if (!cfg.eval_clip_modes.empty()) {
    o << "    eval_clip_modes \"";
    for (std::size_t i = 0; i < cfg.eval_clip_modes.size(); ++i) {
      o << (i ? " " : "") << to_string(cfg.eval_clip_modes[i]);
    }
    o << "\"\n";
  }
  o << "    train_warp " << fmt_double(cfg.train_warp) << "\n";
  o << "    compare_deformable_k " << cfg.compare_deformable_k << "\n";
  o << "    task\n    {\n";
  o << "        num_classes " << cfg.task.num_classes << "\n";
  o << "        d_min " << cfg.task.d_min << "\n";
  o << "        d_max " << cfg.task.d_max << "\n";
  o << "        length " << cfg.task.length << "\n";
  o << "        noise " << fmt_double(cfg.task.noise) << "\n";
  o << "        embedding_seed " << cfg.task.embedding_seed << "\n";
  o << "    }\n";
  std::istringstream net(serialize_network_config(cfg.network));
  for (std::string line; std::getline(net, line);) o << "    " << line << "\n";
  o << "}\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Training and evaluation

namespace {

ClipMode training_clip(const NetworkConfig& cfg) {
  for (const LayerSpec& l : cfg.resolved_layers()) {
    if (l.kind == LayerKind::deformable) return l.clip_mode;
  }
  return ClipMode::none;
}

Index deformable_count(const NetworkConfig& cfg) {
  Index n = 0;
  for (const LayerSpec& l : cfg.resolved_layers()) n += l.kind == LayerKind::deformable;
  return n;
}

struct EvalTotals {
  double loss = 0.0;
  Index correct = 0;
  Index frames = 0;
};

EvalTotals eval_set(const Network& net, const std::vector<FeatureSeqd>& features,
                    const std::vector<std::vector<int>>& labels) {
  EvalTotals t;
  for (std::size_t s = 0; s < features.size(); ++s) {
    const LossResult r = frame_ce_loss(network_forward(net, features[s]).logits, labels[s]);
    t.loss += r.loss;
    t.correct += r.correct;
    t.frames += static_cast<Index>(labels[s].size());
  }
  t.loss /= static_cast<double>(features.size());
  return t;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double TrainReport::median_eval_loss(double warp_W, ClipMode clip) const {
  Index last = -1;
  for (const EvalRecord& e : evals) last = std::max(last, e.step);
  std::vector<double> losses;
  for (const EvalRecord& e : evals) {
    if (e.step == last && e.warp_W == warp_W && e.clip_mode == clip) {
      losses.push_back(e.loss);
    }
  }
  return median(losses);
}

std::vector<EvalRecord> evaluate(const Network& trained, const ExperimentConfig& cfg,
                                 Index step, const std::vector<ClipMode>& clips) {
  Rng eval_rng(cfg.eval_seed);
  const Batch held_out = generate_batch(cfg.task, cfg.eval_sequences, eval_rng);
  std::vector<EvalRecord> out;
  for (ClipMode clip : clips) {
    Network net = trained;
    net.set_clip_mode(clip);
    for (double W : cfg.eval_warps) {
      const Index reps = W == 0.0 ? 1 : cfg.warp_seeds;
      for (Index r = 0; r < reps; ++r) {
        const std::uint64_t seed = W == 0.0 ? cfg.eval_seed : cfg.eval_seed + 1 + r;
        std::vector<FeatureSeqd> feats;
        if (W == 0.0) {
          feats = held_out.features;
        } else {
          Rng warp_rng(seed);
          for (const FeatureSeqd& x : held_out.features) {
            feats.push_back(time_warp(x, W, warp_rng));
          }
        }
        const EvalTotals t = eval_set(net, feats, held_out.labels);
        out.push_back({step, "eval", W, clip, t.loss,
                       static_cast<double>(t.correct) / static_cast<double>(t.frames),
                       seed});
      }
    }
  }
  return out;
}

TrainOutcome train_network(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainOutcome out{TrainReport{}, build_network(cfg.network)};
  TrainReport& rep = out.report;
  Network& net = out.network;
  rep.train_clip = training_clip(cfg.network);
  rep.deformable_layers = deformable_count(cfg.network);
  rep.train_seed = cfg.train_seed;
  rep.name = rep.deformable_layers == 0 ? "standard" : "deformable";
  std::vector<ClipMode> clips = cfg.eval_clip_modes;
  if (clips.empty() || rep.deformable_layers == 0) clips = {rep.train_clip};

  auto record_eval = [&](Index step) {
    auto e = evaluate(net, cfg, step, clips);
    rep.evals.insert(rep.evals.end(), e.begin(), e.end());
  };
  record_eval(0);

  Rng data_rng(cfg.train_seed);
  Rng warp_rng = data_rng.fork(1);
  AdamState adam;
  for (Index step = 1; step <= cfg.steps; ++step) {
    Batch batch = generate_batch(cfg.task, cfg.batch_size, data_rng);
    if (cfg.train_warp > 0.0) {
      for (std::size_t s = 0; s < batch.size(); ++s) {
        WarpSpec w;
        batch.features[s] = time_warp(batch.features[s], cfg.train_warp, warp_rng, &w);
        batch.labels[s] = frame_labels(warp_classes(batch.frame_classes[s], w),
                                       cfg.task.stride, cfg.task.num_classes);
      }
    }
    std::map<std::string, Eigen::MatrixXd> grads;
    double loss = 0.0;
    Index correct = 0, frames = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const ForwardTrace trace = network_trace(net, batch.features[s]);
      const LossResult r = frame_ce_loss(trace.logits, batch.labels[s]);
      loss += r.loss;
      correct += r.correct;
      frames += static_cast<Index>(batch.labels[s].size());
      GradientStore g = network_backward(net, trace, r.grad_logits);
      for (auto& [name, m] : g.params) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, std::move(m));
        } else {
          it->second += m;
        }
      }
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    loss *= scale;
    if (!std::isfinite(loss)) {
      rep.diverged = true;
      rep.message = "non-finite training loss at step " + std::to_string(step);
      break;
    }
    for (auto& [name, m] : grads) m *= scale;
    rep.steps.push_back(
        {step, loss, static_cast<double>(correct) / static_cast<double>(frames)});
    auto params = net.parameters();
    try {
      optimizer_step(params, grads, adam, cfg.adam);
    } catch (const TrainingError& e) {
      rep.diverged = true;
      rep.message = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    if (step == cfg.steps || (cfg.eval_interval > 0 && step % cfg.eval_interval == 0)) {
      record_eval(step);
    }
  }
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

TrainReport train_run(const ExperimentConfig& cfg) { return train_network(cfg).report; }

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::ordered_json report_to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["train_clip"] = to_string(r.train_clip);
  j["deformable_layers"] = r.deformable_layers;
  j["train_seed"] = r.train_seed;
  j["diverged"] = r.diverged;
  j["message"] = r.message;
  auto& steps = j["train"] = nlohmann::ordered_json::array();
  for (const StepRecord& s : r.steps) {
    steps.push_back({{"step", s.step}, {"loss", s.loss}, {"frame_acc", s.frame_acc}});
  }
  auto& evals = j["eval"] = nlohmann::ordered_json::array();
  for (const EvalRecord& e : r.evals) {
    evals.push_back({{"step", e.step},
                     {"split", e.split},
                     {"warp_W", e.warp_W},
                     {"clip_mode", to_string(e.clip_mode)},
                     {"loss", e.loss},
                     {"frame_acc", e.frame_acc},
                     {"seed", e.seed}});
  }
  return j;
}

}  // namespace

std::string report_json(const TrainReport& r) { return report_to_json(r).dump(2) + "\n"; }

std::string metrics_csv(const TrainReport& r) {
  std::ostringstream o;
  o << "step,split,warp_W,clip_mode,loss,frame_acc,seed\n";
  for (const StepRecord& s : r.steps) {
    o << s.step << ",train,0," << to_string(r.train_clip) << ","
      << fmt_double(s.loss) << "," << fmt_double(s.frame_acc) << ","
      << r.train_seed << "\n";
  }
  for (const EvalRecord& e : r.evals) {
    o << e.step << "," << e.split << "," << fmt_double(e.warp_W) << ","
      << to_string(e.clip_mode) << "," << fmt_double(e.loss) << ","
      << fmt_double(e.frame_acc) << "," << e.seed << "\n";
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Paired comparison

ComparisonReport run_comparison(const ExperimentConfig& base) {
  base.validate();
  ExperimentConfig cfg = base;
  if (std::find(cfg.eval_warps.begin(), cfg.eval_warps.end(), 0.0) == cfg.eval_warps.end()) {
    cfg.eval_warps.insert(cfg.eval_warps.begin(), 0.0);
  }
  const Index k = cfg.compare_deformable_k;

  ComparisonReport r;
  r.largest_warp = *std::max_element(cfg.eval_warps.begin(), cfg.eval_warps.end());

  ExperimentConfig std_cfg = cfg;
  std_cfg.network = cfg.network.with_deformable_last_k(0).with_clip(ClipMode::none);
  std_cfg.eval_clip_modes = {ClipMode::none};
  r.standard = train_run(std_cfg);

  ExperimentConfig def_cfg = cfg;
  def_cfg.network = cfg.network.with_deformable_last_k(k).with_clip(ClipMode::none);
  def_cfg.eval_clip_modes = {ClipMode::none, ClipMode::latency_controlled};
  r.deformable = train_run(def_cfg);

  ExperimentConfig clip_cfg = cfg;
  clip_cfg.network =
      cfg.network.with_deformable_last_k(k).with_clip(ClipMode::latency_controlled);
  clip_cfg.eval_clip_modes = {ClipMode::latency_controlled};
  r.deformable_clipped = train_run(clip_cfg);
  r.deformable_clipped.name = "deformable_clipped";
  return r;
}

ComparisonReport::Summary ComparisonReport::summary() const {
  Summary s;
  s.standard_clean = standard.median_eval_loss(0.0, ClipMode::none);
  s.deformable_clean = deformable.median_eval_loss(0.0, ClipMode::none);
  s.standard_warped = standard.median_eval_loss(largest_warp, ClipMode::none);
  s.deformable_warped = deformable.median_eval_loss(largest_warp, ClipMode::none);
  s.unconstrained = s.deformable_clean;
  s.clip_test_only = deformable.median_eval_loss(0.0, ClipMode::latency_controlled);
  s.clip_train_test =
      deformable_clipped.median_eval_loss(0.0, ClipMode::latency_controlled);
  return s;
}

std::string comparison_json(const ComparisonReport& r) {
  const auto s = r.summary();
  nlohmann::ordered_json j;
  j["largest_warp"] = r.largest_warp;
  j["median_eval_loss"] = {
      {"standard_clean", s.standard_clean},
      {"deformable_clean", s.deformable_clean},
      {"standard_warped", s.standard_warped},
      {"deformable_warped", s.deformable_warped},
      {"train_none_test_none", s.unconstrained},
      {"train_none_test_clip", s.clip_test_only},
      {"train_clip_test_clip", s.clip_train_test}};
  j["relative"] = {
      {"warped_gain", 1.0 - s.deformable_warped / s.standard_warped},
      {"clean_gain", 1.0 - s.deformable_clean / s.standard_clean},
      {"clip_test_only_degradation", s.clip_test_only / s.unconstrained - 1.0},
      {"clip_train_test_degradation", s.clip_train_test / s.unconstrained - 1.0}};
  j["runs"] = {report_to_json(r.standard), report_to_json(r.deformable),
               report_to_json(r.deformable_clipped)};
  return j.dump(2) + "\n";
}

}  // namespace dtdnn
