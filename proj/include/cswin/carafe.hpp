#pragma once

// Content-aware reassembly upsampling. A small conv stack predicts one
// softmax-normalized k_up x k_up kernel per output pixel; each output pixel is
// the kernel-weighted sum over the neighborhood of its source pixel.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "cswin/errors.hpp"
#include "cswin/ops.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

struct UpsampleConfig {
  std::size_t sigma = 2;
  std::size_t k_up = 5;
  std::size_t k_encoder = 3;
  std::size_t c_mid = 64;

  std::size_t kernel_area() const { return k_up * k_up; }
  std::size_t predicted_channels() const { return sigma * sigma * kernel_area(); }

  void validate() const {
    if (sigma < 1) throw ConfigError("upsample ratio must be >= 1");
    if (k_up % 2 == 0) throw ConfigError("k_up must be odd, got " + std::to_string(k_up));
    if (k_encoder % 2 == 0) throw ConfigError("k_encoder must be odd, got " + std::to_string(k_encoder));
    if (c_mid == 0) throw ConfigError("c_mid must be positive");
  }
};

template <class T>
struct KernelPredictorParams {
  Tensor<T> compressor_w;  // [1, 1, C, c_mid]
  Tensor<T> compressor_b;  // [c_mid]
  Tensor<T> encoder_w;     // [k_enc, k_enc, c_mid, sigma^2 k_up^2]
  Tensor<T> encoder_b;     // [sigma^2 k_up^2]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "compressor.weight", compressor_w);
    f(prefix + "compressor.bias", compressor_b);
    f(prefix + "encoder.weight", encoder_w);
    f(prefix + "encoder.bias", encoder_b);
  }

  static KernelPredictorParams init(std::size_t channels, const UpsampleConfig& cfg, Rng& rng) {
    cfg.validate();
    KernelPredictorParams p;
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    p.compressor_w = uniform_tensor<T>({1, 1, channels, cfg.c_mid}, rng, -bound, bound);
    p.compressor_b = Tensor<T>({cfg.c_mid});
    // small encoder weights start every kernel close to uniform
    p.encoder_w = trunc_normal_tensor<T>({cfg.k_encoder, cfg.k_encoder, cfg.c_mid, cfg.predicted_channels()}, rng, 1e-3);
    p.encoder_b = Tensor<T>({cfg.predicted_channels()});
    return p;
  }
};

/// weights: [sigma*H, sigma*W, k_up^2], row-major (n, m) with n the row offset.
template <class T>
struct ReassemblyKernelField {
  Tensor<T> weights;
  std::size_t k_up = 0;
};

struct PixelIndex {
  std::size_t i = 0, j = 0;
  bool operator==(const PixelIndex&) const = default;
};

/// Source pixel of output pixel (i', j') for a (height x width) source map.
inline PixelIndex source_index(std::size_t i_out, std::size_t j_out, std::size_t sigma, std::size_t height,
                               std::size_t width) {
  if (sigma == 0) throw ConfigError("upsample ratio must be >= 1");
  if (i_out >= sigma * height || j_out >= sigma * width) {
    throw DimensionError("source_index: (" + std::to_string(i_out) + "," + std::to_string(j_out) +
                         ") outside upsampled map " + std::to_string(sigma * height) + "x" +
                         std::to_string(sigma * width));
  }
  return {i_out / sigma, j_out / sigma};
}

/// Compressor (1x1) -> context encoder (k_enc x k_enc, zero padded) ->
/// channel-to-space shuffle -> softmax over each pixel's k_up^2 logits.
/// Encoder channel (di*sigma + dj)*k_up^2 + idx is the logit for kernel entry
/// idx of output pixel (sigma*i + di, sigma*j + dj).
template <class T>
ReassemblyKernelField<T> predict_kernels(const Tensor<T>& x, const KernelPredictorParams<T>& p,
                                         const UpsampleConfig& cfg) {
  cfg.validate();
  if (x.rank() != 3) throw DimensionError("predict_kernels: expected (H,W,C), got " + to_string(x.shape()));
  if (p.compressor_w.rank() != 4 || p.compressor_w.size(2) != x.size(2) || p.compressor_w.size(3) != cfg.c_mid) {
    throw DimensionError("predict_kernels: compressor " + to_string(p.compressor_w.shape()) + " vs input channels " +
                         std::to_string(x.size(2)));
  }
  if (p.encoder_w.shape() != Shape{cfg.k_encoder, cfg.k_encoder, cfg.c_mid, cfg.predicted_channels()}) {
    throw DimensionError("predict_kernels: encoder weight " + to_string(p.encoder_w.shape()) + " does not match config");
  }
  Tensor<T> squeezed = conv2d(x, p.compressor_w, p.compressor_b, 1, 0);
  Tensor<T> logits = conv2d(squeezed, p.encoder_w, p.encoder_b, 1, cfg.k_encoder / 2);
  return {softmax(depth_to_space(logits, cfg.sigma), -1), cfg.k_up};
}

/// out(i', j', c) = sum_{n,m in [-r, r]} W_{i'j'}(n, m) * x(i'/sigma + n, j'/sigma + m, c),
/// r = k_up / 2, out-of-bounds neighbors read as zero.
template <class T>
Tensor<T> reassemble(const Tensor<T>& x, const ReassemblyKernelField<T>& field, const UpsampleConfig& cfg) {
  if (x.rank() != 3) throw DimensionError("reassemble: expected (H,W,C), got " + to_string(x.shape()));
  const std::size_t h = x.size(0), w = x.size(1), c = x.size(2);
  const std::size_t s = cfg.sigma, k = cfg.k_up, kk = k * k;
  const Tensor<T>& wt = field.weights;
  if (k % 2 == 0 || wt.shape() != Shape{s * h, s * w, kk}) {
    throw DimensionError("reassemble: kernel field " + to_string(wt.shape()) + " does not match " +
                         std::to_string(s * h) + "x" + std::to_string(s * w) + "x" + std::to_string(kk));
  }
  const long r = static_cast<long>(k / 2);
  const std::size_t ho = s * h, wo = s * w;
  auto visit = [=](auto&& fn) {
    for (std::size_t io = 0; io < ho; ++io) {
      const long i = static_cast<long>(io / s);
      for (std::size_t jo = 0; jo < wo; ++jo) {
        const long j = static_cast<long>(jo / s);
        const std::size_t pix = io * wo + jo;
        for (long n = -r; n <= r; ++n) {
          const long y = i + n;
          if (y < 0 || y >= static_cast<long>(h)) continue;
          for (long m = -r; m <= r; ++m) {
            const long xx = j + m;
            if (xx < 0 || xx >= static_cast<long>(w)) continue;
            const std::size_t widx = pix * kk + static_cast<std::size_t>((n + r) * static_cast<long>(k) + (m + r));
            fn(pix * c, (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(xx)) * c, widx);
          }
        }
      }
    }
  };
  Tensor<T> out({ho, wo, c});
  visit([&](std::size_t o, std::size_t in, std::size_t widx) {
    const T a = wt[widx];
    for (std::size_t ch = 0; ch < c; ++ch) out[o + ch] += a * x[in + ch];
  });
  detail::record<T>("reassemble", out, {x, wt}, [x, wt, out, visit, c]() mutable {
    auto g = out.grad();
    const bool need_x = x.requires_grad(), need_w = wt.requires_grad();
    std::span<T> gx = need_x ? x.mutable_grad() : std::span<T>{};
    std::span<T> gw = need_w ? wt.mutable_grad() : std::span<T>{};
    visit([&](std::size_t o, std::size_t in, std::size_t widx) {
      if (need_x) {
        const T a = wt[widx];
        for (std::size_t ch = 0; ch < c; ++ch) gx[in + ch] += a * g[o + ch];
      }
      if (need_w) {
        T acc = 0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += g[o + ch] * x[in + ch];
        gw[widx] += acc;
      }
    });
  });
  return out;
}

/// (H, W, C) -> (sigma H, sigma W, C). Channel changes belong to the caller.
template <class T>
Tensor<T> carafe_upsample(const Tensor<T>& x, const KernelPredictorParams<T>& p, const UpsampleConfig& cfg) {
  return reassemble(x, predict_kernels(x, p, cfg), cfg);
}

}  // namespace cswin
