#pragma once

// Minibatch SGD training loop and evaluation over in-memory samples.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cswin/augment.hpp"
#include "cswin/config_io.hpp"
#include "cswin/data.hpp"
#include "cswin/errors.hpp"
#include "cswin/loss.hpp"
#include "cswin/metrics.hpp"
#include "cswin/network.hpp"
#include "cswin/optim.hpp"
#include "cswin/random.hpp"

namespace cswin {

struct TrainConfig {
  OptimizerConfig optimizer;
  LossConfig loss;
  bool augment = true;
  std::size_t val_interval = 0;  // 0 disables periodic validation
  std::uint64_t init_seed = 0;   // parameter initialization

  void validate() const {
    optimizer.validate();
    loss.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"optimizer", to_json(c.optimizer)}, {"loss", to_json(c.loss)}, {"augment", c.augment},
          {"val_interval", c.val_interval},    {"init_seed", c.init_seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::StrictReader r(j, "train config");
  TrainConfig c;
  c.optimizer = optimizer_config_from_json(r.raw("optimizer"));
  c.loss = loss_config_from_json(r.raw("loss"));
  c.augment = r.get<bool>("augment");
  c.val_interval = r.get<std::size_t>("val_interval");
  c.init_seed = r.get<std::uint64_t>("init_seed");
  r.finish();
  return c;
}

/// Everything that evolves during training.
template <class T>
struct TrainState {
  ModelParams<T> params;
  SgdState<T> optimizer;
  Rng rng;
  std::size_t iteration = 0;  // completed iterations
  std::vector<std::size_t> order;  // current epoch permutation
  std::size_t cursor = 0;

  static TrainState fresh(const NetworkConfig& cfg, const TrainConfig& tc) {
    return {init_params<T>(cfg, tc.init_seed), {}, Rng(tc.optimizer.seed), 0, {}, 0};
  }
};

struct CurvePoint {
  std::size_t iteration = 0;  // 1-based
  double loss = 0;
  double lr = 0;
  std::vector<double> dsc;  // per class, on the augmented training batch
};

struct TrainCallbacks {
  std::function<void(const CurvePoint&)> on_iteration;
  std::function<void(std::size_t iteration, const MetricsReport&)> on_validation;
};

template <class T>
Mask predict_mask(const Tensor<T>& image, const ModelParams<T>& p, const NetworkConfig& cfg) {
  const Tensor<T> logits = forward(image, p, cfg);
  return Mask(logits.size(0), logits.size(1), argmax_mask(logits));
}

template <class T>
MetricsReport evaluate(const std::vector<SegmentationSample<T>>& samples, const ModelParams<T>& p,
                       const NetworkConfig& cfg) {
  MetricsReport rep(cfg.num_classes);
  for (const auto& s : samples) rep.add(predict_mask(s.image, p, cfg), s.mask);
  return rep;
}

namespace detail {

template <class T>
std::size_t next_index(TrainState<T>& st, std::size_t n) {
  if (st.order.size() != n || st.cursor >= n) {
    st.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) st.order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(st.order[i - 1], st.order[st.rng.below(i)]);
    st.cursor = 0;
  }
  return st.order[st.cursor++];
}

}  // namespace detail

/// Runs iterations until `tc.optimizer.max_iterations` have completed. Each
/// iteration draws batch_size samples from a reshuffled epoch order, optionally
/// augments them, and takes one SGD step on the batch-mean loss.
template <class T>
std::vector<CurvePoint> train(TrainState<T>& st, const NetworkConfig& cfg,
                              const std::vector<SegmentationSample<T>>& data, const TrainConfig& tc,
                              const std::vector<SegmentationSample<T>>& val = {}, const TrainCallbacks& cb = {}) {
  tc.validate();
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  for (const auto& s : data) {
    if (s.image.rank() != 3 || s.image.size(0) != cfg.input_size || s.image.size(1) != cfg.input_size ||
        s.image.size(2) != cfg.in_channels) {
      throw DataError("sample " + s.id + " has shape " + to_string(s.image.shape()) + ", network expects " +
                      std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) + "x" +
                      std::to_string(cfg.in_channels));
    }
  }
  std::vector<Tensor<T>> flat;
  st.params.visit([&](const std::string&, Tensor<T>& t) { flat.push_back(t); });
  st.params.set_requires_grad(true);

  const std::size_t bs = tc.optimizer.batch_size;
  const T inv_bs = T(1) / static_cast<T>(bs);
  std::vector<CurvePoint> curve;
  while (st.iteration < tc.optimizer.max_iterations) {
    const std::size_t it = st.iteration + 1;
    st.params.zero_grad();
    double batch_loss = 0;
    std::vector<double> batch_dsc(cfg.num_classes, 0.0);
    for (std::size_t b = 0; b < bs; ++b) {
      const auto& s = data[detail::next_index(st, data.size())];
      Tensor<T> image = s.image;
      Mask mask = s.mask;
      if (tc.augment) {
        auto a = cswin::augment(image, mask, st.rng);
        image = std::move(a.image);
        mask = std::move(a.mask);
      }
      Tape<T> tape;
      Tensor<T> logits, loss, scaled;
      {
        auto scope = tape.record();
        logits = forward(image, st.params, cfg);
        loss = combined_loss(logits, mask, tc.loss);
        scaled = scale(loss, inv_bs);
      }
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw NumericError("non-finite loss at iteration " + std::to_string(it));
      try {
        tape.backward(scaled);
      } catch (const NumericError& e) {
        throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
      }
      batch_loss += lv / static_cast<double>(bs);
      const Mask pred(mask.height, mask.width, argmax_mask(logits));
      for (std::size_t c = 0; c < cfg.num_classes; ++c)
        batch_dsc[c] += dsc(pred, mask, static_cast<std::uint8_t>(c)) / static_cast<double>(bs);
    }
    const double lr = tc.optimizer.lr_at(st.iteration);
    sgd_step(flat, st.optimizer, lr, tc.optimizer.momentum, tc.optimizer.weight_decay);
    st.iteration = it;
    CurvePoint pt{it, batch_loss, lr, std::move(batch_dsc)};
    if (cb.on_iteration) cb.on_iteration(pt);
    curve.push_back(std::move(pt));
    if (tc.val_interval && !val.empty() && it % tc.val_interval == 0) {
      const MetricsReport rep = evaluate(val, st.params, cfg);
      if (cb.on_validation) cb.on_validation(it, rep);
    }
  }
  st.params.zero_grad();
  return curve;
}

inline void write_curve_header(std::ostream& os, std::size_t num_classes) {
  os << "iteration,loss,lr";
  for (std::size_t c = 0; c < num_classes; ++c) os << ",dsc_" << c;
  os << '\n';
}

inline void write_curve_row(std::ostream& os, const CurvePoint& p) {
  os << p.iteration << ',' << p.loss << ',' << p.lr;
  for (double d : p.dsc) os << ',' << d;
  os << '\n';
}

}  // namespace cswin
