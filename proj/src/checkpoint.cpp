/* Copyright 2026 The fdistill Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fdistill/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "fdistill/config.hpp"
#include "fdistill/errors.hpp"

namespace fdistill {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Parser {
 public:
  Parser(const std::vector<unsigned char>& buf, std::size_t end) : buf_(buf), end_(end) {}

  void bytes(void* p, std::size_t n, const char* what) {
    if (n > end_ - pos_) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, 8, what);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::vector<double> f64s(const char* what) {
    const std::uint64_t n = u64(what);
    if (n > (end_ - pos_) / sizeof(double)) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double), what);
    return v;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void write_net(Writer& w, const std::string& name, const FeedForwardNet& net) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(net.widths().size()));
  for (std::size_t width : net.widths()) w.u64(width);
  w.f64s(net.parameters());
}

void read_net(Parser& p, const std::string& name, FeedForwardNet& net) {
  const std::string got = p.str("network name");
  if (got != name) throw CheckpointError("expected network '" + name + "', found '" + got + "'");
  const std::uint32_t layers = p.u32("layer widths");
  std::vector<std::size_t> widths(layers);
  for (auto& width : widths) width = p.u64("layer widths");
  if (widths != net.widths()) throw CheckpointError("network '" + name + "' widths disagree with the stored config");
  const auto params = p.f64s("parameters");
  if (params.size() != net.parameter_count()) {
    throw CheckpointError("network '" + name + "' parameter count mismatch");
  }
  net.set_parameters(params);
}

void write_adam(Writer& w, const AdamState& a) {
  w.f64s(a.m);
  w.f64s(a.v);
  w.u64(a.step);
}

void read_adam(Parser& p, AdamState& a) {
  auto m = p.f64s("optimizer first moment");
  auto v = p.f64s("optimizer second moment");
  if (m.size() != a.m.size() || v.size() != a.v.size()) throw CheckpointError("optimizer state size mismatch");
  a.m = std::move(m);
  a.v = std::move(v);
  a.step = p.u64("optimizer step");
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const TrainState& state, const RunConfig& config, const std::string& path) {
  Writer w;
  w.bytes("FDST", 4);
  w.u32(kCheckpointVersion);
  w.str(to_json(config).dump());
  write_net(w, "generator", state.generator);
  write_net(w, "denoiser", state.denoiser.net());
  write_net(w, "discriminator", state.discriminator.net());
  write_adam(w, state.generator_adam);
  write_adam(w, state.denoiser_adam);
  write_adam(w, state.discriminator_adam);
  w.u64(state.iteration);
  auto& buf = w.buffer();
  w.u64(fnv1a64(buf.data(), buf.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint to " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("cannot write checkpoint to " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw CheckpointError("truncated checkpoint: file too short");
  if (std::memcmp(buf.data(), "FDST", 4) != 0) throw CheckpointError("bad magic: not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (reader expects " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, 8);
  if (fnv1a64(buf.data(), body) != stored) throw CheckpointError("checksum mismatch: checkpoint is corrupt or truncated");

  Parser p(buf, body);
  p.u32("magic");
  p.u32("version");
  LoadedCheckpoint out;
  try {
    out.config = run_config_from_json(nlohmann::json::parse(p.str("config")), "checkpoint.config");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("stored config is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("stored config is invalid: ") + e.what());
  }
  out.state = Distiller(out.config).initial_state();
  read_net(p, "generator", out.state.generator);
  read_net(p, "denoiser", out.state.denoiser.net());
  read_net(p, "discriminator", out.state.discriminator.net());
  read_adam(p, out.state.generator_adam);
  read_adam(p, out.state.denoiser_adam);
  read_adam(p, out.state.discriminator_adam);
  out.state.iteration = p.u64("iteration");
  if (!p.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return out;
}

}  // namespace fdistill
