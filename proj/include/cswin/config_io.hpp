#pragma once

// JSON forms of the configuration structs. Readers are strict: every field
// must be present and unknown keys are rejected.

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cswin/errors.hpp"
#include "cswin/loss.hpp"
#include "cswin/network.hpp"
#include "cswin/optim.hpp"

namespace cswin {

using json = nlohmann::json;

namespace detail {

class StrictReader {
 public:
  StrictReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
    for (auto it = j_.begin(); it != j_.end(); ++it) unseen_.insert(it.key());
  }

  template <class V>
  V get(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError(where_ + ": missing key '" + key + "'");
    unseen_.erase(key);
    try {
      return it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json& raw(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError(where_ + ": missing key '" + key + "'");
    unseen_.erase(key);
    return *it;
  }

  void finish() const {
    if (!unseen_.empty()) throw ConfigError(where_ + ": unknown key '" + *unseen_.begin() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> unseen_;
};

}  // namespace detail

inline json to_json(const NetworkConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"depth", s.depth}, {"sw", s.sw}, {"heads", s.heads}, {"dim", s.dim}});
  return {{"input_size", c.input_size}, {"in_channels", c.in_channels}, {"num_classes", c.num_classes},
          {"embed_dim", c.embed_dim},   {"stages", stages},             {"skip_connections", c.skip_connections},
          {"upsampler", to_string(c.upsampler)}, {"mlp_ratio", c.mlp_ratio}, {"lepe", c.lepe},
          {"k_up", c.k_up},             {"k_encoder", c.k_encoder},     {"c_mid", c.c_mid}};
}

inline NetworkConfig network_config_from_json(const json& j) {
  detail::StrictReader r(j, "network config");
  NetworkConfig c;
  c.input_size = r.get<std::size_t>("input_size");
  c.in_channels = r.get<std::size_t>("in_channels");
  c.num_classes = r.get<std::size_t>("num_classes");
  c.embed_dim = r.get<std::size_t>("embed_dim");
  const json& stages = r.raw("stages");
  if (!stages.is_array() || stages.size() != kNumStages) throw ConfigError("network config: 'stages' must list 4 stages");
  for (std::size_t s = 0; s < kNumStages; ++s) {
    detail::StrictReader sr(stages[s], "stages[" + std::to_string(s) + "]");
    c.stages[s] = {sr.get<std::size_t>("depth"), sr.get<std::size_t>("sw"), sr.get<std::size_t>("heads"),
                   sr.get<std::size_t>("dim")};
    sr.finish();
  }
  c.skip_connections = r.get<std::size_t>("skip_connections");
  c.upsampler = parse_upsampler(r.get<std::string>("upsampler"));
  c.mlp_ratio = r.get<std::size_t>("mlp_ratio");
  c.lepe = r.get<bool>("lepe");
  c.k_up = r.get<std::size_t>("k_up");
  c.k_encoder = r.get<std::size_t>("k_encoder");
  c.c_mid = r.get<std::size_t>("c_mid");
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const LossConfig& c) {
  return {{"alpha", c.alpha}, {"beta", c.beta}, {"dice_smooth", c.dice_smooth}};
}

inline LossConfig loss_config_from_json(const json& j) {
  detail::StrictReader r(j, "loss config");
  LossConfig c{r.get<double>("alpha"), r.get<double>("beta"), r.get<double>("dice_smooth")};
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const OptimizerConfig& c) {
  return {{"lr", c.lr},       {"momentum", c.momentum},      {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"max_iterations", c.max_iterations}, {"seed", c.seed},
          {"poly_decay", c.poly_decay}};
}

inline OptimizerConfig optimizer_config_from_json(const json& j) {
  detail::StrictReader r(j, "optimizer config");
  OptimizerConfig c;
  c.lr = r.get<double>("lr");
  c.momentum = r.get<double>("momentum");
  c.weight_decay = r.get<double>("weight_decay");
  c.batch_size = r.get<std::size_t>("batch_size");
  c.max_iterations = r.get<std::size_t>("max_iterations");
  c.seed = r.get<std::uint64_t>("seed");
  c.poly_decay = r.get<bool>("poly_decay");
  r.finish();
  c.validate();
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

inline NetworkConfig load_network_config(const std::string& path) {
  return network_config_from_json(read_json_file(path));
}

}  // namespace cswin
