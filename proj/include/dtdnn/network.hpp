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

// Multi-layer TDNN built from a NetworkConfig, with an optional deformable
// tail and a per-frame linear output projection.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtdnn/config.hpp"
#include "dtdnn/core.hpp"
#include "dtdnn/layers.hpp"

namespace dtdnn {

struct NetworkLayer {
  LayerSpec spec;
  ConvParams<double> params;
  // Present exactly when spec.kind is deformable.
  std::optional<OffsetPredictor<double>> predictor;

  GridSpec grid() const { return spec.grid(); }
  bool deformable() const { return predictor.has_value(); }
};

// Named, writable view of one parameter array.
struct ParamView {
  std::string name;
  Eigen::Map<Eigen::MatrixXd> value;
};

struct ParamConstView {
  std::string name;
  Eigen::Map<const Eigen::MatrixXd> value;
};

class Network {
 public:
  const NetworkConfig& config() const { return config_; }
  const std::vector<NetworkLayer>& layers() const { return layers_; }
  std::vector<NetworkLayer>& layers() { return layers_; }
  const ConvParams<double>& output() const { return output_; }
  ConvParams<double>& output() { return output_; }

  std::uint64_t config_hash() const { return dtdnn::config_hash(config_); }
  std::uint64_t seed() const { return config_.seed; }
  Index input_dim() const { return config_.input_dim; }
  Index output_dim() const { return config_.output_dim; }
  Index stride_product() const { return config_.stride_product(); }
  Index output_length(Index input_length) const;
  bool has_deformable() const;

  // Per-layer counts from the layer formulas plus the output projection.
  long long parameter_count() const;

  // Parameters in a fixed order: layer{i}.weight, layer{i}.bias,
  // layer{i}.offset.weight, layer{i}.offset.bias (deformable layers only),
  // then output.weight, output.bias. Layer indices are 1-based.
  std::vector<ParamView> parameters();
  std::vector<ParamConstView> parameters() const;

  // Switches the latency clip of every deformable layer.
  void set_clip_mode(ClipMode mode);

 private:
  friend Network build_network(const NetworkConfig& cfg);
  NetworkConfig config_;
  std::vector<NetworkLayer> layers_;
  ConvParams<double> output_;
};

/// Deterministic construction from cfg.seed. Main weights and the output
/// projection are uniform in +-sqrt(1 / fan_in); offset predictors start at
/// zero, so networks that differ only in deformable_last_k share weights.
Network build_network(const NetworkConfig& cfg);

// Everything network_backward needs from a forward pass.
struct ForwardTrace {
  std::vector<FeatureSeqd> inputs;   // input of each layer
  std::vector<FeatureSeqd> outputs;  // post-activation output of each layer
  std::vector<std::optional<OffsetField<double>>> raw_offsets;
  std::vector<std::optional<OffsetField<double>>> used_offsets;
  FeatureSeqd logits;
};

struct ForwardResult {
  FeatureSeqd logits;
  // Used offsets of each deformable layer, in layer order, when captured.
  std::vector<OffsetField<double>> offsets;
  std::vector<Index> offset_layers;  // 1-based layer index of each entry
};

ForwardResult network_forward(const Network& net, const FeatureSeqd& x,
                              bool capture = false);
ForwardTrace network_trace(const Network& net, const FeatureSeqd& x);

struct GradientStore {
  std::map<std::string, Eigen::MatrixXd> params;
  FeatureSeqd input;

  bool contains(const std::string& name) const { return params.count(name) > 0; }
  const Eigen::MatrixXd& at(const std::string& name) const;
};

GradientStore network_backward(const Network& net, const ForwardTrace& trace,
                               const FeatureSeqd& grad_logits);
GradientStore network_backward(const Network& net, const FeatureSeqd& x,
                               const FeatureSeqd& grad_logits);

}  // namespace dtdnn
