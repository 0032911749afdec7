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

#include "dtdnn/feature_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace dtdnn {

static_assert(std::endian::native == std::endian::little,
              "FSEQ I/O assumes a little-endian host");

void write_fseq(const FeatureSeqd& x, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write feature file '" + path + "'");
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(x.rows()),
                                 static_cast<std::uint32_t>(x.cols())};
  out.write("FSEQ", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  // Row-major on disk; Eigen storage is column-major.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = x;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (!out) throw UsageError("failed writing feature file '" + path + "'");
}

FeatureSeqd read_fseq(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read feature file '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), {});
  if (buf.size() < 12 || std::memcmp(buf.data(), "FSEQ", 4) != 0) {
    throw UsageError(path + ": not an FSEQ feature file");
  }
  std::uint32_t dims[2];
  std::memcpy(dims, buf.data() + 4, sizeof(dims));
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1];
  if (dims[0] == 0 || dims[1] == 0) throw UsageError(path + ": empty feature file");
  if (buf.size() != 12 + n * sizeof(double)) {
    throw UsageError(path + ": size does not match " + std::to_string(dims[0]) +
                     "x" + std::to_string(dims[1]) + " header");
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(dims[0], dims[1]);
  std::memcpy(rm.data(), buf.data() + 12, n * sizeof(double));
  FeatureSeqd x = rm;
  if (!x.allFinite()) throw UsageError(path + ": feature file contains non-finite values");
  return x;
}

}  // namespace dtdnn
