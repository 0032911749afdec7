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

// FSEQ feature files: magic "FSEQ", u32 channels, u32 frames, then
// channels * frames little-endian f64 values, channel-major (all frames of
// channel 0 first).

#pragma once

#include <string>

#include "dtdnn/core.hpp"

namespace dtdnn {

void write_fseq(const FeatureSeqd& x, const std::string& path);
FeatureSeqd read_fseq(const std::string& path);

}  // namespace dtdnn
