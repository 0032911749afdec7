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

// Binary checkpoints.
//
// Layout (all integers little-endian):
//   "DTDN"                      magic
//   u32 version                 kCheckpointVersion
//   u32 manifest_bytes, text    manifest (see below)
//   u32 array_count
//   per array: u32 name_bytes, name, u8 dtype (1 = f64), u32 ndim,
//              u64 dims[ndim], f64 values in column-major order
//
// The manifest is plain text: "version", "seed" and "config_hash" lines, then
// a "config" line followed by the serialized NetworkConfig.

#pragma once

#include <cstdint>
#include <string>

#include "dtdnn/network.hpp"

namespace dtdnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Network& net, const std::string& path);

// Throws CheckpointError on unreadable, truncated or inconsistent files.
Network load_checkpoint(const std::string& path);

// Additionally rejects checkpoints whose config hash differs from `expected`.
Network load_checkpoint(const std::string& path, const NetworkConfig& expected);

}  // namespace dtdnn
