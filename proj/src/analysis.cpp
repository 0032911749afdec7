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

#include "dtdnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dtdnn/errors.hpp"
#include "dtdnn/layers.hpp"
#include "dtdnn/train.hpp"
#include "json.hpp"

namespace dtdnn {

DependencyMode parse_dependency_mode(const std::string& s) {
  if (s == "jacobian") return DependencyMode::jacobian;
  if (s == "perturb") return DependencyMode::perturb;
  throw UsageError("dependency mode must be 'jacobian' or 'perturb', got '" + s + "'");
}

DependencyMap dependency_map(const Network& net, const FeatureSeqd& probe,
                             DependencyMode mode) {
  const ForwardTrace trace = network_trace(net, probe);
  const Index out_len = trace.logits.cols(), in_len = probe.cols();
  DependencyMap map;
  map.bits.setZero(out_len, in_len);
  Rng rng(0x5eed);

  if (mode == DependencyMode::jacobian) {
    for (Index i = 0; i < out_len; ++i) {
      FeatureSeqd g = FeatureSeqd::Zero(trace.logits.rows(), out_len);
      for (Index k = 0; k < g.rows(); ++k) g(k, i) = rng.normal();
      const FeatureSeqd gx = network_backward(net, trace, g).input;
      for (Index j = 0; j < in_len; ++j) {
        map.bits(i, j) = gx.col(j).cwiseAbs().maxCoeff() > kJacobianThreshold;
      }
    }
    return map;
  }

  for (Index j = 0; j < in_len; ++j) {
    FeatureSeqd x = probe;
    for (Index c = 0; c < x.rows(); ++c) x(c, j) += kPerturbScale * rng.normal();
    const FeatureSeqd diff = network_forward(net, x).logits - trace.logits;
    for (Index i = 0; i < out_len; ++i) {
      map.bits(i, j) = diff.col(i).cwiseAbs().maxCoeff() > kPerturbThreshold;
    }
  }
  return map;
}

DependencyMap dependency_map(const Network& net, Index length, DependencyMode mode,
                             std::uint64_t probe_seed) {
  if (length < 1) throw UsageError("probe length must be >= 1");
  Rng rng(probe_seed);
  return dependency_map(net, random_normal<double>(net.input_dim(), length, rng), mode);
}

Lookahead lookahead(const DependencyMap& map, Index stride_product) {
  Lookahead la;
  la.per_output.assign(static_cast<std::size_t>(map.rows()), 0);
  for (Index i = 0; i < map.rows(); ++i) {
    for (Index j = map.cols(); j-- > 0;) {
      if (map.depends(i, j)) {
        la.per_output[i] = std::max<Index>(0, j - i * stride_product);
        break;
      }
    }
    la.max = std::max(la.max, la.per_output[i]);
  }
  return la;
}

Envelope envelope(const DependencyMap& map) {
  Envelope e;
  Index prev_lo = -1, prev_hi = -1;
  for (Index i = 0; i < map.rows(); ++i) {
    Index lo = -1, hi = -1;
    for (Index j = 0; j < map.cols(); ++j) {
      if (map.depends(i, j)) {
        if (lo < 0) lo = j;
        hi = j;
      }
    }
    e.lo.push_back(lo);
    e.hi.push_back(hi);
    if (lo < 0) continue;
    if (prev_lo >= 0 && (lo < prev_lo || hi < prev_hi)) e.monotone = false;
    prev_lo = lo;
    prev_hi = hi;
  }
  return e;
}

std::string rf_map_csv(const DependencyMap& map) {
  std::ostringstream o;
  for (Index i = 0; i < map.rows(); ++i) {
    for (Index j = 0; j < map.cols(); ++j) {
      o << (j ? "," : "") << static_cast<int>(map.bits(i, j));
    }
    o << "\n";
  }
  return o.str();
}

std::vector<OffsetHistogram> offset_histogram(const Network& net,
                                              const std::vector<FeatureSeqd>& inputs,
                                              double bin_width) {
  if (!net.has_deformable()) {
    throw UsageError("offset histogram needs at least one deformable layer");
  }
  if (!(bin_width > 0.0)) throw UsageError("histogram bin width must be positive");

  std::vector<std::vector<double>> values;
  std::vector<Index> layers;
  for (const FeatureSeqd& x : inputs) {
    const ForwardResult r = network_forward(net, x, true);
    if (values.empty()) {
      values.resize(r.offsets.size());
      layers = r.offset_layers;
    }
    for (std::size_t l = 0; l < r.offsets.size(); ++l) {
      const auto& d = r.offsets[l].data;
      values[l].insert(values[l].end(), d.data(), d.data() + d.size());
    }
  }

  std::vector<OffsetHistogram> out;
  for (std::size_t l = 0; l < values.size(); ++l) {
    OffsetHistogram h;
    h.layer_index = layers[l];
    h.bin_width = bin_width;
    const auto& v = values[l];
    h.total = static_cast<long long>(v.size());
    if (!v.empty()) {
      const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
      const long long first = static_cast<long long>(std::floor(*mn / bin_width));
      const long long last = static_cast<long long>(std::floor(*mx / bin_width));
      h.counts.assign(static_cast<std::size_t>(last - first + 1), 0);
      for (long long k = first; k <= last + 1; ++k) h.bin_edges.push_back(k * bin_width);
      long long nonpos = 0;
      for (double d : v) {
        ++h.counts[static_cast<std::size_t>(
            static_cast<long long>(std::floor(d / bin_width)) - first)];
        nonpos += d <= 0.0;
      }
      h.fraction_nonpositive = static_cast<double>(nonpos) / static_cast<double>(h.total);
    }
    out.push_back(std::move(h));
  }
  return out;
}

std::string offsets_hist_csv(const std::vector<OffsetHistogram>& hists) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "bin_lo,bin_hi,count,layer_index\n";
  for (const OffsetHistogram& h : hists) {
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
      o << h.bin_edges[k] << "," << h.bin_edges[k + 1] << "," << h.counts[k] << ","
        << h.layer_index << "\n";
    }
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Gradient oracle

std::string GradCheckReport::json() const {
  nlohmann::ordered_json j;
  j["eps"] = eps;
  j["tol"] = tol;
  j["pass"] = pass;
  auto& g = j["groups"] = nlohmann::ordered_json::array();
  for (const GradCheckEntry& e : groups) {
    g.push_back({{"name", e.name},
                 {"max_rel_error", e.max_rel_error},
                 {"probes", e.probes},
                 {"pass", e.pass}});
  }
  return j.dump(2) + "\n";
}

namespace {

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12});
}

}  // namespace

GradCheckReport grad_check(const std::function<double()>& loss,
                           std::vector<GradCheckGroup> groups, double eps, double tol,
                           std::uint64_t seed, Index max_coords, Index directions) {
  if (!(eps > 0.0)) throw UsageError("grad_check: eps must be positive");
  const double base = loss();
  if (loss() != base) {
    throw OracleError("grad_check: closure is not deterministic across repeated calls");
  }
  GradCheckReport rep;
  rep.eps = eps;
  rep.tol = tol;
  Rng rng(seed);
  for (GradCheckGroup& g : groups) {
    const Index n = static_cast<Index>(g.params.size());
    if (g.analytic.size() != n) {
      throw UsageError("grad_check: analytic gradient for '" + g.name +
                       "' has the wrong size");
    }
    Eigen::Map<Eigen::VectorXd> theta(g.params.data(), n);
    const Eigen::VectorXd saved = theta;
    GradCheckEntry e;
    e.name = g.name;
    auto probe = [&](const Eigen::VectorXd& dir) {
      theta = saved + eps * dir;
      const double up = loss();
      theta = saved - eps * dir;
      const double down = loss();
      theta = saved;
      const double numeric = (up - down) / (2.0 * eps);
      e.max_rel_error = std::max(e.max_rel_error, rel_err(g.analytic.dot(dir), numeric));
      ++e.probes;
    };
    if (n <= max_coords) {
      for (Index k = 0; k < n; ++k) probe(Eigen::VectorXd::Unit(n, k));
    } else {
      for (Index d = 0; d < directions; ++d) {
        Eigen::VectorXd dir(n);
        for (Index k = 0; k < n; ++k) dir(k) = rng.normal();
        probe(dir);
      }
    }
    e.pass = e.max_rel_error <= tol;
    rep.pass = rep.pass && e.pass;
    rep.groups.push_back(std::move(e));
  }
  if (loss() != base) {
    throw OracleError("grad_check: parameters were not restored");
  }
  return rep;
}

namespace {

std::span<double> span_of(Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Eigen::VectorXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

Eigen::VectorXd flat(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

double weighted(const FeatureSeqd& y, const FeatureSeqd& r) { return (y.array() * r.array()).sum(); }

void append(GradCheckReport& into, const GradCheckReport& part) {
  into.groups.insert(into.groups.end(), part.groups.begin(), part.groups.end());
  into.pass = into.pass && part.pass;
}

// Random offsets whose sampling positions keep at least 0.1 from integers.
FeatureSeqd fractional_offsets(Index taps, Index len, Rng& rng) {
  FeatureSeqd f(taps, len);
  for (Index k = 0; k < f.size(); ++k) {
    f.data()[k] = static_cast<double>(static_cast<int>(rng.uniform_int(5)) - 2) +
                  rng.uniform(0.1, 0.9);
  }
  return f;
}

double min_position_gap(const Network& net, const FeatureSeqd& x) {
  const ForwardResult r = network_forward(net, x, true);
  double gap = 0.5;
  for (std::size_t l = 0; l < r.offsets.size(); ++l) {
    const NetworkLayer& layer = net.layers()[static_cast<std::size_t>(r.offset_layers[l] - 1)];
    const GridSpec g = layer.grid();
    const auto& f = r.offsets[l];
    for (Index i = 0; i < f.length(); ++i) {
      for (Index n = 0; n < f.taps(); ++n) {
        if (layer.spec.clip_mode == ClipMode::latency_controlled && f(n, i) == 0.0) continue;
        const double t = static_cast<double>(i * g.stride + g.tap(n)) + f(n, i);
        gap = std::min(gap, std::abs(t - std::round(t)));
      }
    }
  }
  return gap;
}

}  // namespace

GradCheckReport gradcheck_suite(const NetworkConfig& mini, std::uint64_t seed,
                                double eps, double tol) {
  GradCheckReport rep;
  rep.eps = eps;
  rep.tol = tol;
  Rng rng(seed);

  {  // standard convolution
    const GridSpec g{3, 2, 2};
    FeatureSeqd x = random_normal<double>(3, 10, rng);
    auto p = ConvParams<double>::zeros(2, 3, 3);
    p.weight = random_normal<double>(2, 9, rng);
    p.bias = random_normal<double>(2, 1, rng);
    const FeatureSeqd r = random_normal<double>(2, g.output_length(10), rng);
    const auto grads = tdnn_backward(x, p, g, r);
    auto loss = [&] { return weighted(tdnn_forward(x, p, g), r); };
    append(rep, grad_check(loss,
                           {{"tdnn.input", span_of(x), flat(grads.grad_x)},
                            {"tdnn.weight", span_of(p.weight), flat(grads.grad_p.weight)},
                            {"tdnn.bias", span_of(p.bias), grads.grad_p.bias}},
                           eps, tol, rng.next_u64()));
  }

  {  // interpolation
    FeatureSeqd x = random_normal<double>(1, 8, rng);
    Eigen::VectorXd t(12), c(12);
    for (Index k = 0; k < 12; ++k) {
      t(k) = static_cast<double>(rng.uniform_int(9)) - 1.0 + rng.uniform(0.1, 0.9);
      c(k) = rng.normal();
    }
    Eigen::VectorXd d_t(12);
    FeatureSeqd d_x = FeatureSeqd::Zero(1, 8);
    for (Index k = 0; k < 12; ++k) {
      const auto ig = interpolate_grad(x, 0, t(k));
      d_t(k) = c(k) * ig.d_dt;
      const Index lo = static_cast<Index>(std::floor(t(k)));
      if (lo >= 0 && lo < 8) d_x(0, lo) += c(k) * ig.w_lo;
      if (lo + 1 >= 0 && lo + 1 < 8) d_x(0, lo + 1) += c(k) * ig.w_hi;
    }
    auto loss = [&] {
      double s = 0.0;
      for (Index k = 0; k < 12; ++k) s += c(k) * interpolate(x, 0, t(k));
      return s;
    };
    append(rep, grad_check(loss,
                           {{"interp.position", span_of(t), d_t},
                            {"interp.input", span_of(x), flat(d_x)}},
                           eps, tol, rng.next_u64()));
  }

  {  // deformable convolution
    const GridSpec g{3, 2, 1};
    FeatureSeqd x = random_normal<double>(2, 11, rng);
    auto p = ConvParams<double>::zeros(3, 2, 3);
    p.weight = random_normal<double>(3, 6, rng);
    p.bias = random_normal<double>(3, 1, rng);
    Eigen::MatrixXd offs = fractional_offsets(3, 11, rng);
    const FeatureSeqd r = random_normal<double>(3, 11, rng);
    const auto grads = deformable_backward(x, p, g, OffsetField<double>(offs), r);
    auto loss = [&] { return weighted(deformable_forward(x, p, g, OffsetField<double>(offs)), r); };
    append(rep, grad_check(loss,
                           {{"deform.input", span_of(x), flat(grads.grad_x)},
                            {"deform.weight", span_of(p.weight), flat(grads.grad_p.weight)},
                            {"deform.bias", span_of(p.bias), grads.grad_p.bias},
                            {"deform.offset", span_of(offs), flat(grads.grad_f.data)}},
                           eps, tol, rng.next_u64()));
  }

  {  // latency clip
    Eigen::MatrixXd f(3, 6);
    for (Index k = 0; k < f.size(); ++k) {
      f.data()[k] = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.1, 2.0);
    }
    const FeatureSeqd r = random_normal<double>(3, 6, rng);
    const auto back = clip_offsets_backward(OffsetField<double>(f), OffsetField<double>(r),
                                            ClipMode::latency_controlled);
    auto loss = [&] {
      return weighted(clip_offsets(OffsetField<double>(f), ClipMode::latency_controlled).data, r);
    };
    append(rep, grad_check(loss, {{"clip.offset", span_of(f), flat(back.data)}}, eps, tol,
                           rng.next_u64()));
  }

  {  // offset predictor through clip and convolution
    const GridSpec g{3, 2, 1};
    auto p = ConvParams<double>::zeros(3, 2, 3);
    p.weight = random_normal<double>(3, 6, rng);
    auto layer = DeformableLayer<double>::fresh(p, g, 5, ClipMode::latency_controlled);
    layer.predictor.params.weight = random_normal<double>(3, 10, rng, 0.02);
    layer.predictor.params.bias << -1.5, 0.5, -0.5;
    FeatureSeqd x = random_normal<double>(2, 13, rng);
    const FeatureSeqd r = random_normal<double>(3, 13, rng);
    const auto grads = deformable_layer_backward(x, layer, r);
    auto loss = [&] { return weighted(deformable_layer_apply(x, layer).y, r); };
    append(rep,
           grad_check(loss,
                      {{"predictor.input", span_of(x), flat(grads.grad_x)},
                       {"predictor.weight", span_of(layer.predictor.params.weight),
                        flat(grads.grad_predictor.weight)},
                       {"predictor.bias", span_of(layer.predictor.params.bias),
                        grads.grad_predictor.bias}},
                      eps, tol, rng.next_u64()));
  }

  {  // frame loss
    FeatureSeqd logits = random_normal<double>(4, 7, rng);
    std::vector<int> labels;
    for (int i = 0; i < 7; ++i) labels.push_back(static_cast<int>(rng.uniform_int(4)));
    const auto res = frame_ce_loss(logits, labels);
    auto loss = [&] { return frame_ce_loss(logits, labels).loss; };
    append(rep, grad_check(loss, {{"loss.logits", span_of(logits), flat(res.grad_logits)}},
                           eps, tol, rng.next_u64()));
  }

  {  // full network
    Network net = build_network(mini);
    const Index len = 15;
    FeatureSeqd x = random_normal<double>(net.input_dim(), len, rng);
    // Move every deformable layer off the integer grid so the offset path is
    // differentiable at the probe point.
    for (int attempt = 0;; ++attempt) {
      for (NetworkLayer& l : net.layers()) {
        if (!l.predictor) continue;
        auto& pp = l.predictor->params;
        pp.weight = random_normal<double>(pp.weight.rows(), pp.weight.cols(), rng, 0.02);
        for (Index n = 0; n < pp.bias.size(); ++n) {
          pp.bias(n) = (n % 2 ? 0.5 : -0.5) + rng.uniform(-0.1, 0.1);
        }
      }
      if (min_position_gap(net, x) >= 0.01) break;
      if (attempt == 50) throw OracleError("gradcheck_suite: no non-degenerate probe found");
    }
    std::vector<int> labels;
    for (Index i = 0; i < net.output_length(len); ++i) {
      labels.push_back(static_cast<int>(rng.uniform_int(net.output_dim())));
    }
    const ForwardTrace trace = network_trace(net, x);
    const GradientStore grads =
        network_backward(net, trace, frame_ce_loss(trace.logits, labels).grad_logits);
    auto loss = [&] { return frame_ce_loss(network_forward(net, x).logits, labels).loss; };
    std::vector<GradCheckGroup> groups;
    for (ParamView& p : net.parameters()) {
      groups.push_back({"network." + p.name,
                        {p.value.data(), static_cast<std::size_t>(p.value.size())},
                        flat(grads.at(p.name))});
    }
    groups.push_back({"network.input", span_of(x), flat(grads.input)});
    append(rep, grad_check(loss, std::move(groups), eps, tol, rng.next_u64()));
  }
  return rep;
}

}  // namespace dtdnn
