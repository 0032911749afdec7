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

// Declarative network description and its text form.
//
// Configs are Boost.PropertyTree INFO documents:
//
//   network
//   {
//       input_dim 120
//       output_dim 72
//       hidden_dim 640
//       seed 1
//       deformable_last_k 2
//       layers
//       {
//           layer { kernel_size 5  dilation 1  stride 1 }
//           ...
//       }
//   }
//
// A layer may also set in_channels, out_channels, kind (standard |
// deformable), clip_mode (none | latency_controlled), activation (relu |
// none) and predictor_kernel. Missing channel counts chain from the previous
// layer and default to hidden_dim.

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dtdnn/layers.hpp"

namespace dtdnn {

enum class LayerKind { standard, deformable };
enum class Activation { relu, none };

struct LayerSpec {
  Index kernel_size = 1;
  Index dilation = 1;
  Index stride = 1;
  Index in_channels = 0;
  Index out_channels = 0;
  LayerKind kind = LayerKind::standard;
  ClipMode clip_mode = ClipMode::none;
  Activation activation = Activation::relu;
  Index predictor_kernel = 5;

  GridSpec grid() const { return {kernel_size, dilation, stride}; }
  LayerDescription description() const {
    return {in_channels, out_channels, kernel_size,
            kind == LayerKind::deformable, predictor_kernel};
  }
};

struct NetworkConfig {
  std::vector<LayerSpec> layers;
  Index deformable_last_k = 0;
  Index input_dim = 0;
  Index output_dim = 0;
  std::uint64_t seed = 0;
  double max_offset = std::numeric_limits<double>::infinity();

  // Throws ConfigError naming the offending (1-based) layer.
  void validate() const;

  // Layer list with deformable_last_k applied.
  std::vector<LayerSpec> resolved_layers() const;

  Index stride_product() const;

  // Sets the clip mode of every layer.
  NetworkConfig with_clip(ClipMode mode) const;
  NetworkConfig with_deformable_last_k(Index k) const;
};

std::string to_string(LayerKind k);
std::string to_string(Activation a);

NetworkConfig parse_network_config(const std::string& text);
NetworkConfig load_network_config(const std::string& path);
std::string serialize_network_config(const NetworkConfig& cfg);

// FNV-1a 64 of the canonical serialization.
std::uint64_t config_hash(const NetworkConfig& cfg);

std::string read_text_file(const std::string& path);

}  // namespace dtdnn
