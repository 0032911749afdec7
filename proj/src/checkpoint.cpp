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

#include "dtdnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <vector>

#include "dtdnn/errors.hpp"

namespace dtdnn {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'T', 'D', 'N'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string path)
      : buf_(std::move(buf)), path_(std::move(path)) {}

  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    const char* p = take(n);
    return std::string(p, n);
  }
  const char* take(std::size_t n) {
    if (n > buf_.size() - pos_) {
      throw CheckpointError(path_ + ": corrupt checkpoint (truncated)");
    }
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string manifest_text(const Network& net) {
  std::ostringstream m;
  m << "version " << kCheckpointVersion << "\n";
  m << "seed " << net.seed() << "\n";
  m << "config_hash " << net.config_hash() << "\n";
  m << "config\n" << serialize_network_config(net.config());
  return m.str();
}

struct Manifest {
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;
  NetworkConfig config;
};

Manifest parse_manifest(const std::string& text, const std::string& path) {
  const auto corrupt = [&](const std::string& why) {
    return CheckpointError(path + ": corrupt manifest (" + why + ")");
  };
  std::istringstream in(text);
  std::string key;
  Manifest m;
  std::uint32_t version = 0;
  if (!(in >> key >> version) || key != "version") throw corrupt("version");
  if (!(in >> key >> m.seed) || key != "seed") throw corrupt("seed");
  if (!(in >> key >> m.hash) || key != "config_hash") throw corrupt("config_hash");
  if (!(in >> key) || key != "config") throw corrupt("config");
  const std::string rest(std::istreambuf_iterator<char>(in), {});
  try {
    m.config = parse_network_config(rest);
  } catch (const ConfigError& e) {
    throw corrupt(e.what());
  }
  if (config_hash(m.config) != m.hash) throw corrupt("config hash mismatch");
  if (m.config.seed != m.seed) throw corrupt("seed mismatch");
  return m;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(manifest_text(net));
  const auto params = net.parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const ParamConstView& p : params) {
    w.str(p.name);
    w.pod<std::uint8_t>(kDtypeF64);
    w.pod<std::uint32_t>(2);
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(p.value.rows()));
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(p.value.cols()));
    w.bytes(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), {});
  Reader r(std::move(buf), path);

  if (std::memcmp(r.take(4), kMagic, 4) != 0) {
    throw CheckpointError(path + ": not a checkpoint (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const Manifest manifest = parse_manifest(r.str(), path);
  Network net = build_network(manifest.config);

  std::map<std::string, ParamView*> by_name;
  auto params = net.parameters();
  for (ParamView& p : params) by_name[p.name] = &p;

  const auto count = r.pod<std::uint32_t>();
  if (count != params.size()) {
    throw CheckpointError(path + ": expected " + std::to_string(params.size()) +
                          " arrays, found " + std::to_string(count));
  }
  std::map<std::string, bool> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    if (r.pod<std::uint8_t>() != kDtypeF64) {
      throw CheckpointError(path + ": array '" + name + "' has unsupported dtype");
    }
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim != 2) throw CheckpointError(path + ": array '" + name + "' is not 2-D");
    const auto rows = r.pod<std::uint64_t>();
    const auto cols = r.pod<std::uint64_t>();
    auto it = by_name.find(name);
    if (it == by_name.end() || seen[name]) {
      throw CheckpointError(path + ": unexpected array '" + name + "'");
    }
    ParamView& dst = *it->second;
    if (rows != static_cast<std::uint64_t>(dst.value.rows()) ||
        cols != static_cast<std::uint64_t>(dst.value.cols())) {
      throw CheckpointError(path + ": array '" + name + "' has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            " but the config needs " +
                            std::to_string(dst.value.rows()) + "x" +
                            std::to_string(dst.value.cols()));
    }
    const std::size_t n = static_cast<std::size_t>(rows * cols);
    std::memcpy(dst.value.data(), r.take(n * sizeof(double)), n * sizeof(double));
    seen[name] = true;
  }
  if (!r.done()) throw CheckpointError(path + ": corrupt checkpoint (trailing bytes)");
  return net;
}

Network load_checkpoint(const std::string& path, const NetworkConfig& expected) {
  Network net = load_checkpoint(path);
  if (net.config_hash() != config_hash(expected)) {
    throw CheckpointError(path + ": checkpoint was saved for a different config (hash " +
                          std::to_string(net.config_hash()) + ", expected " +
                          std::to_string(config_hash(expected)) + ")");
  }
  return net;
}

}  // namespace dtdnn
