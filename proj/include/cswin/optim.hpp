#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

struct OptimizerConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 24;
  std::size_t max_iterations = 300;
  std::uint64_t seed = 0;
  bool poly_decay = false;  // lr * (1 - it / max_iterations)^0.9 when on

  void validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }

  double lr_at(std::size_t iteration) const {
    if (!poly_decay || max_iterations == 0) return lr;
    const double frac = 1.0 - static_cast<double>(iteration) / static_cast<double>(max_iterations);
    return lr * std::pow(std::max(frac, 0.0), 0.9);
  }
};

/// One momentum buffer per parameter, in parameter order.
template <class T>
struct SgdState {
  std::vector<std::vector<T>> velocity;
};

/// Classic SGD with coupled weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// Parameters without a gradient are treated as having a zero gradient.
template <class T>
void sgd_step(std::vector<Tensor<T>>& params, SgdState<T>& state, double lr, double momentum, double weight_decay) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), T(0));
  }
  if (state.velocity.size() != params.size()) throw ContractError("sgd_step: optimizer state does not match parameters");
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i];
    auto& v = state.velocity[i];
    if (v.size() != p.numel()) {
      throw ContractError("sgd_step: momentum buffer " + std::to_string(i) + " has " + std::to_string(v.size()) +
                          " entries, parameter has " + std::to_string(p.numel()));
    }
    const bool has = p.has_grad();
    auto g = p.grad();
    auto data = p.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      v[j] = mu * v[j] + (has ? g[j] : T(0)) + wd * data[j];
      data[j] -= step * v[j];
    }
  }
}

}  // namespace cswin
