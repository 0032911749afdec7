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

#include "dtdnn/config.hpp"

#include <boost/property_tree/info_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dtdnn/errors.hpp"

namespace dtdnn {

namespace pt = boost::property_tree;

namespace {

std::string layer_tag(std::size_t index) {
  return "layer " + std::to_string(index + 1);
}

void check_keys(const pt::ptree& node, const std::set<std::string>& allowed,
                const std::string& where) {
  for (const auto& [key, child] : node) {
    if (!allowed.count(key)) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get_required(const pt::ptree& node, const std::string& key,
               const std::string& where) {
  auto v = node.get_optional<std::string>(key);
  if (!v) throw ConfigError(where + ": missing required key '" + key + "'");
  auto parsed = node.get_optional<T>(key);
  if (!parsed) {
    throw ConfigError(where + ": key '" + key + "' has invalid value '" + *v + "'");
  }
  return *parsed;
}

template <typename T>
T get_or(const pt::ptree& node, const std::string& key, T fallback,
         const std::string& where) {
  auto v = node.get_optional<std::string>(key);
  if (!v) return fallback;
  auto parsed = node.get_optional<T>(key);
  if (!parsed) {
    throw ConfigError(where + ": key '" + key + "' has invalid value '" + *v + "'");
  }
  return *parsed;
}

LayerKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "standard") return LayerKind::standard;
  if (s == "deformable") return LayerKind::deformable;
  throw ConfigError(where + ": kind must be 'standard' or 'deformable', got '" + s + "'");
}

Activation parse_activation(const std::string& s, const std::string& where) {
  if (s == "relu") return Activation::relu;
  if (s == "none") return Activation::none;
  throw ConfigError(where + ": activation must be 'relu' or 'none', got '" + s + "'");
}

ClipMode parse_clip(const std::string& s, const std::string& where) {
  try {
    return parse_clip_mode(s);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

std::string to_string(LayerKind k) {
  return k == LayerKind::standard ? "standard" : "deformable";
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "none"; }

void NetworkConfig::validate() const {
  if (input_dim < 1) throw ConfigError("network: input_dim must be >= 1");
  if (output_dim < 1) throw ConfigError("network: output_dim must be >= 1");
  if (layers.empty()) throw ConfigError("network: at least one layer is required");
  if (deformable_last_k < 0 ||
      deformable_last_k > static_cast<Index>(layers.size())) {
    throw ConfigError("network: deformable_last_k = " +
                      std::to_string(deformable_last_k) + " exceeds the " +
                      std::to_string(layers.size()) + " layers");
  }
  if (!(max_offset > 0.0)) {
    throw ConfigError("network: max_offset must be positive");
  }
  Index prev = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = layer_tag(i);
    try {
      l.grid().validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (l.in_channels != prev) {
      throw ConfigError(where + ": in_channels " + std::to_string(l.in_channels) +
                        " does not match the previous width " + std::to_string(prev));
    }
    if (l.out_channels < 1) throw ConfigError(where + ": out_channels must be >= 1");
    if (l.predictor_kernel < 1 || l.predictor_kernel % 2 == 0) {
      throw ConfigError(where + ": predictor_kernel must be a positive odd integer");
    }
    prev = l.out_channels;
  }
}

std::vector<LayerSpec> NetworkConfig::resolved_layers() const {
  std::vector<LayerSpec> out = layers;
  const std::size_t first = out.size() - static_cast<std::size_t>(deformable_last_k);
  for (std::size_t i = first; i < out.size(); ++i) out[i].kind = LayerKind::deformable;
  return out;
}

Index NetworkConfig::stride_product() const {
  Index s = 1;
  for (const LayerSpec& l : layers) s *= l.stride;
  return s;
}

NetworkConfig NetworkConfig::with_clip(ClipMode mode) const {
  NetworkConfig c = *this;
  for (LayerSpec& l : c.layers) l.clip_mode = mode;
  return c;
}

NetworkConfig NetworkConfig::with_deformable_last_k(Index k) const {
  NetworkConfig c = *this;
  c.deformable_last_k = k;
  return c;
}

NetworkConfig parse_network_config(const std::string& text) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::read_info(in, root);
  } catch (const pt::info_parser_error& e) {
    throw ConfigError("network config: parse error at line " +
                      std::to_string(e.line()) + ": " + e.message());
  }
  const pt::ptree* net = &root;
  if (auto child = root.get_child_optional("network")) net = &*child;
  const std::string where = "network";
  check_keys(*net,
             {"input_dim", "output_dim", "hidden_dim", "seed", "deformable_last_k",
              "clip_mode", "predictor_kernel", "max_offset", "layers"},
             where);

  NetworkConfig cfg;
  cfg.input_dim = get_required<Index>(*net, "input_dim", where);
  cfg.output_dim = get_required<Index>(*net, "output_dim", where);
  cfg.seed = get_or<std::uint64_t>(*net, "seed", 0, where);
  cfg.deformable_last_k = get_or<Index>(*net, "deformable_last_k", 0, where);
  cfg.max_offset = get_or<double>(*net, "max_offset",
                                  std::numeric_limits<double>::infinity(), where);
  const Index hidden = get_or<Index>(*net, "hidden_dim", 0, where);
  const ClipMode clip =
      parse_clip(get_or<std::string>(*net, "clip_mode", "none", where), where);
  const Index predictor_kernel = get_or<Index>(*net, "predictor_kernel", 5, where);

  auto layers = net->get_child_optional("layers");
  if (!layers) throw ConfigError("network: missing required key 'layers'");
  Index prev = cfg.input_dim;
  for (const auto& [key, node] : *layers) {
    const std::string lw = layer_tag(cfg.layers.size());
    if (key != "layer") throw ConfigError("network.layers: unknown key '" + key + "'");
    check_keys(node,
               {"kernel_size", "dilation", "stride", "in_channels", "out_channels",
                "kind", "clip_mode", "activation", "predictor_kernel"},
               lw);
    LayerSpec l;
    l.kernel_size = get_required<Index>(node, "kernel_size", lw);
    l.dilation = get_or<Index>(node, "dilation", 1, lw);
    l.stride = get_or<Index>(node, "stride", 1, lw);
    l.in_channels = get_or<Index>(node, "in_channels", prev, lw);
    l.out_channels = get_or<Index>(node, "out_channels", hidden, lw);
    l.kind = parse_kind(get_or<std::string>(node, "kind", "standard", lw), lw);
    l.clip_mode = parse_clip(
        get_or<std::string>(node, "clip_mode", to_string(clip), lw), lw);
    l.activation =
        parse_activation(get_or<std::string>(node, "activation", "relu", lw), lw);
    l.predictor_kernel = get_or<Index>(node, "predictor_kernel", predictor_kernel, lw);
    prev = l.out_channels;
    cfg.layers.push_back(l);
  }
  cfg.validate();
  return cfg;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

NetworkConfig load_network_config(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return parse_network_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string serialize_network_config(const NetworkConfig& cfg) {
  std::ostringstream out;
  out << "network\n{\n";
  out << "    input_dim " << cfg.input_dim << "\n";
  out << "    output_dim " << cfg.output_dim << "\n";
  out << "    seed " << cfg.seed << "\n";
  out << "    deformable_last_k " << cfg.deformable_last_k << "\n";
  if (std::isfinite(cfg.max_offset)) {
    std::ostringstream v;
    v.precision(17);
    v << cfg.max_offset;
    out << "    max_offset " << v.str() << "\n";
  }
  out << "    layers\n    {\n";
  for (const LayerSpec& l : cfg.layers) {
    out << "        layer { kernel_size " << l.kernel_size << " dilation "
        << l.dilation << " stride " << l.stride << " in_channels "
        << l.in_channels << " out_channels " << l.out_channels << " kind "
        << to_string(l.kind) << " clip_mode " << to_string(l.clip_mode)
        << " activation " << to_string(l.activation) << " predictor_kernel "
        << l.predictor_kernel << " }\n";
  }
  out << "    }\n}\n";
  return out.str();
}

std::uint64_t config_hash(const NetworkConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : serialize_network_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace dtdnn
