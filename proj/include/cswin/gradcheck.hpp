#pragma once

// Central-difference gradient checks against the tape's reverse-mode result.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;      // denominator floor in the relative error
  std::size_t max_entries = 0;  // per input; 0 checks every entry
  std::uint64_t seed = 0;       // entry sampling when max_entries > 0
};

struct GradCheckResult {
  bool ok = true;
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "input[i] entry j: analytic a, numeric n"
};

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double a, double n, double floor = 1e-8) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// `f` maps the inputs to a scalar loss and must record on the active tape.
/// The analytic gradient of every input is compared against
/// (f(x + h e) - f(x - h e)) / 2h on all (or a seeded sample of) entries.
inline GradCheckResult gradcheck(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                 std::vector<Tensor<double>> inputs, const GradCheckOptions& opt = {}) {
  for (auto& x : inputs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }
  {
    Tape<double> tape;
    Tensor<double> loss;
    {
      auto scope = tape.record();
      loss = f(inputs);
    }
    tape.backward(loss);
  }
  auto eval = [&] {
    return f(inputs).item();  // no active tape: plain evaluation
  };

  GradCheckResult res;
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double>& x = inputs[i];
    const std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                                      : std::vector<double>(x.numel(), 0.0);
    std::vector<std::size_t> entries;
    if (opt.max_entries == 0 || opt.max_entries >= x.numel()) {
      for (std::size_t j = 0; j < x.numel(); ++j) entries.push_back(j);
    } else {
      for (std::size_t k = 0; k < opt.max_entries; ++k) entries.push_back(rng.below(x.numel()));
    }
    for (std::size_t j : entries) {
      const double orig = x[j];
      x[j] = orig + opt.step;
      const double up = eval();
      x[j] = orig - opt.step;
      const double down = eval();
      x[j] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double err = relative_error(analytic[j], numeric, opt.abs_floor);
      ++res.checked;
      if (err > res.max_rel_error || !std::isfinite(err)) {
        res.max_rel_error = std::isfinite(err) ? err : INFINITY;
        res.worst = "input[" + std::to_string(i) + "] entry " + std::to_string(j) + ": analytic " +
                    std::to_string(analytic[j]) + ", numeric " + std::to_string(numeric);
      }
    }
  }
  res.ok = res.max_rel_error <= opt.rel_tol;
  return res;
}

}  // namespace cswin
