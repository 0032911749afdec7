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

#include "dtdnn/network.hpp"

#include <cmath>

#include "dtdnn/errors.hpp"

namespace dtdnn {

namespace {

const GridSpec kProjectionGrid{1, 1, 1};

std::string layer_name(std::size_t i) { return "layer" + std::to_string(i + 1); }

}  // namespace

const Eigen::MatrixXd& GradientStore::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw UsageError("no gradient for parameter '" + name + "'");
  return it->second;
}

Index Network::output_length(Index input_length) const {
  Index len = input_length;
  for (const NetworkLayer& l : layers_) len = l.grid().output_length(len);
  return len;
}

bool Network::has_deformable() const {
  for (const NetworkLayer& l : layers_)
    if (l.deformable()) return true;
  return false;
}

long long Network::parameter_count() const {
  long long total = 0;
  for (const NetworkLayer& l : layers_) total += param_count(l.spec.description()).total();
  total += param_count({output_.in_channels, output_.out_channels(), 1, false, 1}).total();
  return total;
}

std::vector<ParamView> Network::parameters() {
  std::vector<ParamView> out;
  auto add = [&](std::string name, auto& m) {
    out.push_back({std::move(name), Eigen::Map<Eigen::MatrixXd>(m.data(), m.rows(), m.cols())});
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    NetworkLayer& l = layers_[i];
    add(layer_name(i) + ".weight", l.params.weight);
    add(layer_name(i) + ".bias", l.params.bias);
    if (l.predictor) {
      add(layer_name(i) + ".offset.weight", l.predictor->params.weight);
      add(layer_name(i) + ".offset.bias", l.predictor->params.bias);
    }
  }
  add("output.weight", output_.weight);
  add("output.bias", output_.bias);
  return out;
}

std::vector<ParamConstView> Network::parameters() const {
  std::vector<ParamConstView> out;
  auto add = [&](std::string name, const auto& m) {
    out.push_back({std::move(name),
                   Eigen::Map<const Eigen::MatrixXd>(m.data(), m.rows(), m.cols())});
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const NetworkLayer& l = layers_[i];
    add(layer_name(i) + ".weight", l.params.weight);
    add(layer_name(i) + ".bias", l.params.bias);
    if (l.predictor) {
      add(layer_name(i) + ".offset.weight", l.predictor->params.weight);
      add(layer_name(i) + ".offset.bias", l.predictor->params.bias);
    }
  }
  add("output.weight", output_.weight);
  add("output.bias", output_.bias);
  return out;
}

void Network::set_clip_mode(ClipMode mode) {
  config_ = config_.with_clip(mode);
  for (NetworkLayer& l : layers_) l.spec.clip_mode = mode;
}

Network build_network(const NetworkConfig& cfg) {
  cfg.validate();
  Network net;
  net.config_ = cfg;
  Rng rng(cfg.seed);
  for (const LayerSpec& spec : cfg.resolved_layers()) {
    NetworkLayer l;
    l.spec = spec;
    l.params = ConvParams<double>::zeros(spec.out_channels, spec.in_channels,
                                         spec.kernel_size);
    init_uniform(l.params, rng);
    if (spec.kind == LayerKind::deformable) {
      l.predictor = OffsetPredictor<double>::zeros(
          spec.in_channels, spec.kernel_size, spec.predictor_kernel);
    }
    net.layers_.push_back(std::move(l));
  }
  net.output_ = ConvParams<double>::zeros(cfg.output_dim,
                                          cfg.layers.back().out_channels, 1);
  init_uniform(net.output_, rng);
  return net;
}

ForwardTrace network_trace(const Network& net, const FeatureSeqd& x) {
  if (x.rows() != net.input_dim()) {
    throw UsageError("input has " + std::to_string(x.rows()) +
                     " channels but the network expects " +
                     std::to_string(net.input_dim()));
  }
  if (x.cols() < 1) throw UsageError("input sequence must have at least one frame");
  if (!x.allFinite()) throw UsageError("input contains non-finite values");

  const double max_offset = net.config().max_offset;
  ForwardTrace t;
  FeatureSeqd h = x;
  for (const NetworkLayer& l : net.layers()) {
    t.inputs.push_back(h);
    FeatureSeqd y;
    if (l.deformable()) {
      OffsetField<double> raw;
      OffsetField<double> used = used_offsets(h, *l.predictor, l.grid(),
                                              l.spec.clip_mode, max_offset, &raw);
      y = deformable_forward(h, l.params, l.grid(), used);
      t.raw_offsets.emplace_back(std::move(raw));
      t.used_offsets.emplace_back(std::move(used));
    } else {
      y = tdnn_forward(h, l.params, l.grid());
      t.raw_offsets.emplace_back();
      t.used_offsets.emplace_back();
    }
    if (l.spec.activation == Activation::relu) y = y.cwiseMax(0.0);
    t.outputs.push_back(y);
    h = std::move(y);
  }
  t.logits = tdnn_forward(h, net.output(), kProjectionGrid);
  return t;
}

ForwardResult network_forward(const Network& net, const FeatureSeqd& x,
                              bool capture) {
  ForwardTrace t = network_trace(net, x);
  ForwardResult r;
  r.logits = std::move(t.logits);
  if (capture) {
    for (std::size_t i = 0; i < t.used_offsets.size(); ++i) {
      if (t.used_offsets[i]) {
        r.offsets.push_back(std::move(*t.used_offsets[i]));
        r.offset_layers.push_back(static_cast<Index>(i + 1));
      }
    }
  }
  return r;
}

GradientStore network_backward(const Network& net, const ForwardTrace& trace,
                               const FeatureSeqd& grad_logits) {
  const auto& layers = net.layers();
  if (trace.inputs.size() != layers.size()) {
    throw UsageError("forward trace does not belong to this network");
  }
  if (grad_logits.rows() != trace.logits.rows() ||
      grad_logits.cols() != trace.logits.cols()) {
    throw UsageError("grad_logits shape does not match the network output");
  }
  GradientStore store;
  const FeatureSeqd& last = trace.outputs.back();
  TdnnGrads<double> proj = tdnn_backward(last, net.output(), kProjectionGrid, grad_logits);
  store.params["output.weight"] = std::move(proj.grad_p.weight);
  store.params["output.bias"] = std::move(proj.grad_p.bias);

  const double max_offset = net.config().max_offset;
  FeatureSeqd grad = std::move(proj.grad_x);
  for (std::size_t k = layers.size(); k-- > 0;) {
    const NetworkLayer& l = layers[k];
    if (l.spec.activation == Activation::relu) {
      grad = (trace.outputs[k].array() > 0.0).select(grad, 0.0);
    }
    const FeatureSeqd& in = trace.inputs[k];
    const std::string name = "layer" + std::to_string(k + 1);
    if (l.deformable()) {
      DeformableGrads<double> d =
          deformable_backward(in, l.params, l.grid(), *trace.used_offsets[k], grad);
      const OffsetField<double> grad_raw = used_offsets_backward(
          *trace.raw_offsets[k], d.grad_f, l.spec.clip_mode, max_offset);
      TdnnGrads<double> p = tdnn_backward(in, l.predictor->params,
                                          l.predictor->grid(l.grid()), grad_raw.data);
      store.params[name + ".weight"] = std::move(d.grad_p.weight);
      store.params[name + ".bias"] = std::move(d.grad_p.bias);
      store.params[name + ".offset.weight"] = std::move(p.grad_p.weight);
      store.params[name + ".offset.bias"] = std::move(p.grad_p.bias);
      grad = d.grad_x + p.grad_x;
    } else {
      TdnnGrads<double> s = tdnn_backward(in, l.params, l.grid(), grad);
      store.params[name + ".weight"] = std::move(s.grad_p.weight);
      store.params[name + ".bias"] = std::move(s.grad_p.bias);
      grad = std::move(s.grad_x);
    }
  }
  store.input = std::move(grad);
  return store;
}

GradientStore network_backward(const Network& net, const FeatureSeqd& x,
                               const FeatureSeqd& grad_logits) {
  return network_backward(net, network_trace(net, x), grad_logits);
}

}  // namespace dtdnn
