#pragma once

// Segmentation objectives over (H, W, K) logits and an (H, W) label mask.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/mask.hpp"
#include "cswin/ops.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

struct LossConfig {
  double alpha = 0.4;  // Dice weight
  double beta = 0.6;   // cross-entropy weight
  double dice_smooth = 1e-5;

  void validate() const {
    if (alpha < 0 || beta < 0 || alpha + beta <= 0) {
      throw ConfigError("loss weights need alpha >= 0, beta >= 0, alpha + beta > 0");
    }
    if (dice_smooth < 0) throw ConfigError("dice_smooth must be >= 0");
  }
};

namespace detail {

template <class T>
std::size_t check_logits(const Tensor<T>& logits, const Mask& labels, const char* op) {
  if (logits.rank() != 3 || logits.size(0) != labels.height || logits.size(1) != labels.width) {
    throw DimensionError(std::string(op) + ": logits " + to_string(logits.shape()) + " vs mask " +
                         std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  const std::size_t k = logits.size(2);
  if (k == 0) throw DimensionError(std::string(op) + ": zero classes");
  for (std::uint8_t l : labels.labels) {
    if (l >= k) throw DataError(std::string(op) + ": label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");
  }
  return k;
}

template <class T>
std::vector<T> pixel_softmax(const Tensor<T>& logits, std::size_t k) {
  const std::size_t n = logits.numel() / k;
  std::vector<T> p(logits.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.vec().data() + i * k;
    const T mx = *std::max_element(z, z + k);
    T sum = 0;
    for (std::size_t c = 0; c < k; ++c) sum += (p[i * k + c] = std::exp(z[c] - mx));
    for (std::size_t c = 0; c < k; ++c) p[i * k + c] /= sum;
  }
  return p;
}

}  // namespace detail

/// 1 - mean_k (2 sum p_k y_k + eps) / (sum p_k + sum y_k + eps), p = softmax(logits),
/// y = one-hot(labels); every class (background included) is averaged.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Mask& labels, T smooth = T(1e-5)) {
  const std::size_t k = detail::check_logits(logits, labels, "dice_loss");
  const std::size_t n = labels.size();
  std::vector<T> p = detail::pixel_softmax(logits, k);
  std::vector<T> inter(k, T(0)), psum(k, T(0)), gsum(k, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels.labels[i];
    for (std::size_t c = 0; c < k; ++c) psum[c] += p[i * k + c];
    inter[y] += p[i * k + y];
    gsum[y] += T(1);
  }
  T score = 0;
  for (std::size_t c = 0; c < k; ++c) score += (T(2) * inter[c] + smooth) / (psum[c] + gsum[c] + smooth);
  Tensor<T> out = Tensor<T>::scalar(T(1) - score / static_cast<T>(k));
  detail::record<T>("dice_loss", out, {logits},
                    [logits, out, labels, p = std::move(p), inter, psum, gsum, k, n, smooth]() mutable {
                      const T g = out.grad()[0];
                      std::vector<T> num(k), den(k);
                      for (std::size_t c = 0; c < k; ++c) {
                        num[c] = T(2) * inter[c] + smooth;
                        den[c] = psum[c] + gsum[c] + smooth;
                      }
                      auto gz = logits.mutable_grad();
                      std::vector<T> dp(k);
                      for (std::size_t i = 0; i < n; ++i) {
                        const std::size_t y = labels.labels[i];
                        T dot = 0;
                        for (std::size_t c = 0; c < k; ++c) {
                          const T yc = c == y ? T(1) : T(0);
                          dp[c] = -g / static_cast<T>(k) * (T(2) * yc * den[c] - num[c]) / (den[c] * den[c]);
                          dot += dp[c] * p[i * k + c];
                        }
                        for (std::size_t c = 0; c < k; ++c) gz[i * k + c] += p[i * k + c] * (dp[c] - dot);
                      }
                    });
  return out;
}

/// Mean over pixels of -log softmax(logits)[label], log-sum-exp stabilized.
template <class T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const Mask& labels) {
  const std::size_t k = detail::check_logits(logits, labels, "cross_entropy_loss");
  const std::size_t n = labels.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.vec().data() + i * k;
    const T mx = *std::max_element(z, z + k);
    T s = 0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c] - mx);
    total += mx + std::log(s) - z[labels.labels[i]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  detail::record<T>("cross_entropy_loss", out, {logits}, [logits, out, labels, k, n]() mutable {
    const T g = out.grad()[0] / static_cast<T>(n);
    std::vector<T> p = detail::pixel_softmax(logits, k);
    auto gz = logits.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) gz[i * k + c] += g * p[i * k + c];
      gz[i * k + labels.labels[i]] -= g;
    }
  });
  return out;
}

/// alpha * dice + beta * cross-entropy.
template <class T>
Tensor<T> combined_loss(const Tensor<T>& logits, const Mask& labels, const LossConfig& cfg) {
  cfg.validate();
  Tensor<T> d = dice_loss(logits, labels, static_cast<T>(cfg.dice_smooth));
  Tensor<T> c = cross_entropy_loss(logits, labels);
  return add(scale(d, static_cast<T>(cfg.alpha)), scale(c, static_cast<T>(cfg.beta)));
}

}  // namespace cswin
