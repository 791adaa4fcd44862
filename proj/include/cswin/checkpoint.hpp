#pragma once

// CKPT1 checkpoints: 5-byte magic "CKPT1", u64 LE header length, JSON header
// (config, tensor names, shapes, payload offsets), then the TSR1 encodings of
// every tensor back to back. Offsets are relative to the first payload byte.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cswin/config_io.hpp"
#include "cswin/errors.hpp"
#include "cswin/network.hpp"
#include "cswin/optim.hpp"
#include "cswin/tsr.hpp"

namespace cswin {

inline constexpr char kCkptMagic[5] = {'C', 'K', 'P', 'T', '1'};
inline constexpr int kCkptVersion = 1;

template <class T>
struct Checkpoint {
  NetworkConfig config;
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<Tensor<T>> momentum;  // empty, or one buffer per parameter in the same order
  std::uint64_t iteration = 0;
  std::string rng_state;
};

/// Snapshot of a model (tensors are deep-copied).
template <class T>
Checkpoint<T> make_checkpoint(const NetworkConfig& cfg, ModelParams<T>& params, const SgdState<T>* opt,
                              std::uint64_t iteration, std::string rng_state) {
  Checkpoint<T> ck{cfg, {}, {}, iteration, std::move(rng_state)};
  for (auto& [name, t] : params.named()) ck.params.emplace_back(name, t.clone());
  if (opt && !opt->velocity.empty()) {
    if (opt->velocity.size() != ck.params.size()) throw ContractError("optimizer state does not match parameters");
    for (std::size_t i = 0; i < ck.params.size(); ++i)
      ck.momentum.emplace_back(ck.params[i].second.shape(), opt->velocity[i]);
  }
  return ck;
}

template <class T>
std::string encode_checkpoint(const Checkpoint<T>& ck) {
  std::ostringstream payload(std::ios::binary);
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& name, const Tensor<T>& t) {
    const auto offset = static_cast<std::uint64_t>(payload.tellp());
    write_tensor(payload, t);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", encoded_size(t)}});
  };
  for (const auto& [name, t] : ck.params) put(name, t);
  for (std::size_t i = 0; i < ck.momentum.size(); ++i) put("momentum/" + ck.params.at(i).first, ck.momentum[i]);

  const nlohmann::json header = {{"format_version", kCkptVersion},
                                 {"dtype", dtype_of<T>() == DType::f32 ? "f32" : "f64"},
                                 {"config", to_json(ck.config)},
                                 {"iteration", ck.iteration},
                                 {"rng_state", ck.rng_state},
                                 {"has_momentum", !ck.momentum.empty()},
                                 {"tensors", tensors}};
  const std::string hs = header.dump();
  std::string out(kCkptMagic, sizeof kCkptMagic);
  const auto len = static_cast<std::uint64_t>(hs.size());
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += hs;
  out += payload.str();
  return out;
}

template <class T>
Checkpoint<T> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCkptMagic + 8) throw FormatError("checkpoint: truncated before header");
  if (std::memcmp(bytes.data(), kCkptMagic, sizeof kCkptMagic) != 0) throw FormatError("checkpoint: bad magic");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof kCkptMagic, sizeof len);
  const std::size_t header_begin = sizeof kCkptMagic + 8;
  if (len > bytes.size() - header_begin) throw FormatError("checkpoint: truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(header_begin, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  const std::size_t payload_begin = header_begin + len;
  Checkpoint<T> ck;
  try {
    if (h.at("format_version").get<int>() != kCkptVersion) {
      throw FormatError("checkpoint: unsupported format_version " + h.at("format_version").dump());
    }
    const std::string dt = h.at("dtype").get<std::string>();
    if (dt != (dtype_of<T>() == DType::f32 ? "f32" : "f64")) throw FormatError("checkpoint: dtype is " + dt);
    try {
      ck.config = network_config_from_json(h.at("config"));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint: config: ") + e.what());
    }
    ck.iteration = h.at("iteration").get<std::uint64_t>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    const bool has_momentum = h.at("has_momentum").get<bool>();

    std::set<std::string> seen;
    std::vector<std::pair<std::string, Tensor<T>>> all;
    for (const auto& e : h.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
      const auto off = e.at("offset").get<std::uint64_t>(), nbytes = e.at("bytes").get<std::uint64_t>();
      if (off > bytes.size() - payload_begin || nbytes > bytes.size() - payload_begin - off) {
        throw FormatError("checkpoint: tensor '" + name + "' extends past end of file");
      }
      std::istringstream is(bytes.substr(payload_begin + off, nbytes), std::ios::binary);
      Tensor<T> t = read_tensor<T>(is);
      if (t.shape() != e.at("shape").get<Shape>()) throw FormatError("checkpoint: tensor '" + name + "' shape mismatch");
      all.emplace_back(name, std::move(t));
    }
    for (auto& [name, t] : all) {
      if (name.rfind("momentum/", 0) != 0) ck.params.emplace_back(name, std::move(t));
    }
    if (has_momentum) {
      for (const auto& [name, t] : ck.params) {
        auto it = std::find_if(all.begin(), all.end(), [&](const auto& p) { return p.first == "momentum/" + name; });
        if (it == all.end()) throw FormatError("checkpoint: missing momentum buffer for '" + name + "'");
        if (it->second.shape() != t.shape()) throw FormatError("checkpoint: momentum shape mismatch for '" + name + "'");
        ck.momentum.push_back(it->second);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header field: ") + e.what());
  }
  return ck;
}

template <class T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("failed writing " + path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

/// First differing field between two configs, empty when equal.
inline std::string config_mismatch(const NetworkConfig& have, const NetworkConfig& want) {
  auto diff = [](const std::string& field, auto a, auto b) {
    std::ostringstream os;
    os << field << ": checkpoint has " << a << ", model expects " << b;
    return os.str();
  };
  if (have.input_size != want.input_size) return diff("input_size", have.input_size, want.input_size);
  if (have.in_channels != want.in_channels) return diff("in_channels", have.in_channels, want.in_channels);
  if (have.num_classes != want.num_classes) return diff("num_classes", have.num_classes, want.num_classes);
  if (have.embed_dim != want.embed_dim) return diff("embed_dim", have.embed_dim, want.embed_dim);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::string st = "stage " + std::to_string(s + 1) + " ";
    if (have.stages[s].depth != want.stages[s].depth) return diff(st + "depth", have.stages[s].depth, want.stages[s].depth);
    if (have.stages[s].sw != want.stages[s].sw) return diff(st + "sw", have.stages[s].sw, want.stages[s].sw);
    if (have.stages[s].heads != want.stages[s].heads) return diff(st + "heads", have.stages[s].heads, want.stages[s].heads);
    if (have.stages[s].dim != want.stages[s].dim) return diff(st + "dim", have.stages[s].dim, want.stages[s].dim);
  }
  if (have.skip_connections != want.skip_connections)
    return diff("skip_connections", have.skip_connections, want.skip_connections);
  if (have.upsampler != want.upsampler) return diff("upsampler", to_string(have.upsampler), to_string(want.upsampler));
  if (have.mlp_ratio != want.mlp_ratio) return diff("mlp_ratio", have.mlp_ratio, want.mlp_ratio);
  if (have.lepe != want.lepe) return diff("lepe", have.lepe, want.lepe);
  if (have.k_up != want.k_up) return diff("k_up", have.k_up, want.k_up);
  if (have.k_encoder != want.k_encoder) return diff("k_encoder", have.k_encoder, want.k_encoder);
  if (have.c_mid != want.c_mid) return diff("c_mid", have.c_mid, want.c_mid);
  return {};
}

/// Builds parameters for `cfg` and fills them from the checkpoint; every
/// model parameter must appear exactly once with a matching shape.
template <class T>
ModelParams<T> restore_params(const Checkpoint<T>& ck, const NetworkConfig& cfg) {
  if (auto why = config_mismatch(ck.config, cfg); !why.empty()) throw FormatError("checkpoint config mismatch: " + why);
  ModelParams<T> p = init_params<T>(cfg, 0);
  auto named = p.named();
  if (named.size() != ck.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, model has " +
                      std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto it = std::find_if(ck.params.begin(), ck.params.end(), [&](const auto& q) { return q.first == named[i].first; });
    if (it == ck.params.end()) throw FormatError("checkpoint lacks parameter '" + named[i].first + "'");
    if (it->second.shape() != named[i].second.shape()) {
      throw FormatError("parameter '" + named[i].first + "' has shape " + to_string(it->second.shape()) +
                        ", model expects " + to_string(named[i].second.shape()));
    }
    named[i].second.vec() = it->second.vec();
  }
  return p;
}

template <class T>
ModelParams<T> restore_params(const Checkpoint<T>& ck) {
  return restore_params(ck, ck.config);
}

template <class T>
SgdState<T> restore_optimizer(const Checkpoint<T>& ck) {
  SgdState<T> s;
  for (const auto& m : ck.momentum) s.velocity.push_back(m.vec());
  return s;
}

}  // namespace cswin
