#pragma once

// U-shaped encoder/decoder built from cross-shaped window blocks.
//
//   image (H,W,3) -> 7x7/4 conv embed -> stage1 .. stage4 (3x3/2 conv between)
//   decoder mirrors the encoder; each step up doubles resolution, halves
//   channels and fuses the matching encoder map through concat + 1x1 conv.
//   A final 4x upsample and a per-pixel linear layer give (H,W,K) logits.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cswin/attention.hpp"
#include "cswin/carafe.hpp"
#include "cswin/errors.hpp"
#include "cswin/ops.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

enum class Upsampler { carafe, bilinear, transposed_conv };

inline const char* to_string(Upsampler u) {
  switch (u) {
    case Upsampler::carafe: return "carafe";
    case Upsampler::bilinear: return "bilinear";
    case Upsampler::transposed_conv: return "transposed_conv";
  }
  return "?";
}

inline Upsampler parse_upsampler(const std::string& s) {
  if (s == "carafe") return Upsampler::carafe;
  if (s == "bilinear") return Upsampler::bilinear;
  if (s == "transposed_conv") return Upsampler::transposed_conv;
  throw ConfigError("unknown upsampler '" + s + "' (carafe | bilinear | transposed_conv)");
}

struct StageSpec {
  std::size_t depth = 1;
  std::size_t sw = 1;
  std::size_t heads = 2;
  std::size_t dim = 64;
  bool operator==(const StageSpec&) const = default;
};

inline constexpr std::size_t kNumStages = 4;

struct NetworkConfig {
  std::size_t input_size = 224;
  std::size_t in_channels = 3;
  std::size_t num_classes = 9;
  std::size_t embed_dim = 64;
  std::array<StageSpec, kNumStages> stages{};
  std::size_t skip_connections = 3;
  Upsampler upsampler = Upsampler::carafe;
  std::size_t mlp_ratio = 4;
  bool lepe = false;
  // shared by every CARAFE layer; sigma is set per use (2 in the decoder, 4 in the head)
  std::size_t k_up = 5;
  std::size_t k_encoder = 3;
  std::size_t c_mid = 64;

  bool operator==(const NetworkConfig&) const = default;

  /// 224 input, C = 64, depths [1,2,9,1], sw [1,2,7,7], heads [2,4,8,16].
  static NetworkConfig standard() {
    NetworkConfig c;
    const std::array<std::size_t, 4> depth{1, 2, 9, 1}, sw{1, 2, 7, 7}, heads{2, 4, 8, 16};
    for (std::size_t i = 0; i < kNumStages; ++i) c.stages[i] = {depth[i], sw[i], heads[i], c.embed_dim << i};
    return c;
  }

  /// Desk-scale configuration used by the overfit and gradient harnesses.
  static NetworkConfig tiny() {
    NetworkConfig c;
    c.input_size = 64;
    c.num_classes = 4;
    c.embed_dim = 16;
    c.c_mid = 16;
    const std::array<std::size_t, 4> depth{1, 1, 2, 1}, sw{1, 2, 4, 2}, heads{2, 2, 4, 4};
    for (std::size_t i = 0; i < kNumStages; ++i) c.stages[i] = {depth[i], sw[i], heads[i], c.embed_dim << i};
    return c;
  }

  std::size_t stage_resolution(std::size_t s) const { return (input_size / 4) >> s; }
  std::size_t stage_dim(std::size_t s) const { return embed_dim << s; }

  AttentionConfig attention(std::size_t s) const { return {stages[s].heads, stages[s].sw, stage_dim(s), lepe}; }
  UpsampleConfig carafe_config(std::size_t sigma) const { return {sigma, k_up, k_encoder, c_mid}; }

  void validate() const {
    if (input_size == 0 || input_size % 32 != 0) {
      throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
    }
    if (in_channels == 0) throw ConfigError("in_channels must be positive");
    if (num_classes == 0) throw ConfigError("num_classes must be positive");
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
    if (skip_connections > 3) throw ConfigError("skip_connections must be in 0..3");
    carafe_config(2).validate();
    for (std::size_t s = 0; s < kNumStages; ++s) {
      const StageSpec& st = stages[s];
      const std::string where = "stage " + std::to_string(s + 1) + ": ";
      if (st.dim != stage_dim(s)) {
        throw ConfigError(where + "dim " + std::to_string(st.dim) + " must equal embed_dim * 2^" + std::to_string(s) +
                          " = " + std::to_string(stage_dim(s)));
      }
      try {
        attention(s).validate(stage_resolution(s), stage_resolution(s));
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    }
  }
};

// ---------------------------------------------------------------- parameters

namespace detail {

template <class T>
Tensor<T> conv_weight(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(kh * kw * cin));
  return uniform_tensor<T>({kh, kw, cin, cout}, rng, -bound, bound);
}

}  // namespace detail

/// Parameters of one 2x upsampling step (C -> C/2) or of the final 4x step (C -> C).
template <class T>
struct UpsampleParams {
  KernelPredictorParams<T> carafe;  // carafe only
  Tensor<T> reduce_w, reduce_b;     // 1x1 channel reduction after carafe / bilinear
  Tensor<T> tconv_w, tconv_b;       // transposed conv: [Cin, sigma^2 * Cout], [Cout]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    if (carafe.compressor_w.defined()) carafe.visit(prefix + "carafe.", f);
    if (reduce_w.defined()) {
      f(prefix + "reduce.weight", reduce_w);
      f(prefix + "reduce.bias", reduce_b);
    }
    if (tconv_w.defined()) {
      f(prefix + "tconv.weight", tconv_w);
      f(prefix + "tconv.bias", tconv_b);
    }
  }
};

template <class T>
struct EncoderStageParams {
  std::vector<CSWinBlockParams<T>> blocks;
  Tensor<T> down_w, down_b;  // undefined on the last stage
};

template <class T>
struct DecoderStageParams {
  std::vector<CSWinBlockParams<T>> blocks;
  UpsampleParams<T> up;      // stages 2..4: lifts this stage to the next finer one
  Tensor<T> fuse_w, fuse_b;  // 1x1 conv [1,1,2c,c]; defined when a skip enters this stage
};

template <class T>
struct ModelParams {
  Tensor<T> embed_w, embed_b;
  std::array<EncoderStageParams<T>, kNumStages> encoder;
  std::array<DecoderStageParams<T>, kNumStages> decoder;
  UpsampleParams<T> head_up;
  Tensor<T> classifier_w, classifier_b;

  /// Calls f(name, tensor&) for every parameter in a fixed order.
  template <class F>
  void visit(F&& f) {
    f(std::string("embed.weight"), embed_w);
    f(std::string("embed.bias"), embed_b);
    for (std::size_t s = 0; s < kNumStages; ++s) {
      const std::string pre = "encoder." + std::to_string(s) + ".";
      for (std::size_t b = 0; b < encoder[s].blocks.size(); ++b)
        encoder[s].blocks[b].visit(pre + "blocks." + std::to_string(b) + ".", f);
      if (encoder[s].down_w.defined()) {
        f(pre + "down.weight", encoder[s].down_w);
        f(pre + "down.bias", encoder[s].down_b);
      }
    }
    for (std::size_t s = kNumStages; s-- > 0;) {
      const std::string pre = "decoder." + std::to_string(s) + ".";
      for (std::size_t b = 0; b < decoder[s].blocks.size(); ++b)
        decoder[s].blocks[b].visit(pre + "blocks." + std::to_string(b) + ".", f);
      decoder[s].up.visit(pre + "up.", f);
      if (decoder[s].fuse_w.defined()) {
        f(pre + "fuse.weight", decoder[s].fuse_w);
        f(pre + "fuse.bias", decoder[s].fuse_b);
      }
    }
    head_up.visit("head.up.", f);
    f(std::string("head.classifier.weight"), classifier_w);
    f(std::string("head.classifier.bias"), classifier_b);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }

  std::size_t count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  void set_requires_grad(bool on = true) {
    visit([&](const std::string&, Tensor<T>& t) { t.set_requires_grad(on); });
  }
  void zero_grad() {
    visit([&](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

template <class T>
UpsampleParams<T> init_upsample(const NetworkConfig& cfg, std::size_t cin, std::size_t cout, std::size_t sigma,
                                Rng& rng) {
  UpsampleParams<T> p;
  switch (cfg.upsampler) {
    case Upsampler::carafe:
      p.carafe = KernelPredictorParams<T>::init(cin, cfg.carafe_config(sigma), rng);
      break;
    case Upsampler::bilinear:
      break;
    case Upsampler::transposed_conv: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
      p.tconv_w = uniform_tensor<T>({cin, sigma * sigma * cout}, rng, -bound, bound);
      p.tconv_b = Tensor<T>({cout});
      return p;
    }
  }
  if (cin != cout) {
    p.reduce_w = detail::conv_weight<T>(1, 1, cin, cout, rng);
    p.reduce_b = Tensor<T>({cout});
  }
  return p;
}

template <class T>
ModelParams<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams<T> p;
  const std::size_t c = cfg.embed_dim;
  p.embed_w = detail::conv_weight<T>(7, 7, cfg.in_channels, c, rng);
  p.embed_b = Tensor<T>({c});
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t d = cfg.stage_dim(s);
    for (std::size_t b = 0; b < cfg.stages[s].depth; ++b)
      p.encoder[s].blocks.push_back(CSWinBlockParams<T>::init(d, cfg.mlp_ratio, cfg.lepe, rng));
    if (s + 1 < kNumStages) {
      p.encoder[s].down_w = detail::conv_weight<T>(3, 3, d, 2 * d, rng);
      p.encoder[s].down_b = Tensor<T>({2 * d});
    }
  }
  for (std::size_t s = kNumStages; s-- > 0;) {
    const std::size_t d = cfg.stage_dim(s);
    for (std::size_t b = 0; b < cfg.stages[s].depth; ++b)
      p.decoder[s].blocks.push_back(CSWinBlockParams<T>::init(d, cfg.mlp_ratio, cfg.lepe, rng));
    if (s > 0) p.decoder[s].up = init_upsample<T>(cfg, d, d / 2, 2, rng);
    if (s < cfg.skip_connections) {
      p.decoder[s].fuse_w = detail::conv_weight<T>(1, 1, 2 * d, d, rng);
      p.decoder[s].fuse_b = Tensor<T>({d});
    }
  }
  p.head_up = init_upsample<T>(cfg, c, c, 4, rng);
  p.classifier_w = trunc_normal_tensor<T>({c, cfg.num_classes}, rng, 0.02);
  p.classifier_b = Tensor<T>({cfg.num_classes});
  return p;
}

// ---------------------------------------------------------------- forward

/// 7x7 stride-4 conv: (H, W, Cin) -> (H/4, W/4, C).
template <class T>
Tensor<T> token_embed(const Tensor<T>& image, const Tensor<T>& w, const Tensor<T>& b) {
  if (image.rank() != 3 || image.size(0) % 4 != 0 || image.size(1) % 4 != 0) {
    throw ConfigError("token_embed: image extents must be divisible by 4, got " + to_string(image.shape()));
  }
  return conv2d(image, w, b, 4, 3);
}

/// 3x3 stride-2 conv: (h, w, c) -> (h/2, w/2, 2c).
template <class T>
Tensor<T> downsample(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 3 || x.size(0) % 2 != 0 || x.size(1) % 2 != 0) {
    throw ConfigError("downsample: extents must be even, got " + to_string(x.shape()));
  }
  return conv2d(x, w, b, 2, 1);
}

/// concat(up, skip) along channels, then 1x1 conv 2c -> c.
template <class T>
Tensor<T> skip_fuse(const Tensor<T>& up, const Tensor<T>& skip, const Tensor<T>& w, const Tensor<T>& b) {
  if (up.shape() != skip.shape()) {
    throw DimensionError("skip_fuse: " + to_string(up.shape()) + " vs skip " + to_string(skip.shape()));
  }
  return conv2d(concat(std::vector<Tensor<T>>{up, skip}, 2), w, b, 1, 0);
}

/// Transposed conv with kernel == stride == sigma: each input pixel writes one sigma x sigma output block.
template <class T>
Tensor<T> transposed_conv_upsample(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t sigma) {
  if (x.rank() != 3 || w.rank() != 2 || w.size(0) != x.size(2) || w.size(1) % (sigma * sigma) != 0) {
    throw DimensionError("transposed_conv: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  }
  Tensor<T> y = depth_to_space(linear(x, w, Tensor<T>{}), sigma);
  return add_bias(y, b);
}

template <class T>
Tensor<T> apply_upsample(const Tensor<T>& x, const UpsampleParams<T>& p, const NetworkConfig& cfg,
                         std::size_t sigma) {
  Tensor<T> y;
  switch (cfg.upsampler) {
    case Upsampler::carafe: y = carafe_upsample(x, p.carafe, cfg.carafe_config(sigma)); break;
    case Upsampler::bilinear: y = bilinear_upsample(x, sigma); break;
    case Upsampler::transposed_conv: return transposed_conv_upsample(x, p.tconv_w, p.tconv_b, sigma);
  }
  return p.reduce_w.defined() ? conv2d(y, p.reduce_w, p.reduce_b, 1, 0) : y;
}

template <class T>
Tensor<T> run_blocks(Tensor<T> x, const std::vector<CSWinBlockParams<T>>& blocks, const AttentionConfig& acfg) {
  for (const auto& blk : blocks) x = cswin_block(x, blk, acfg);
  return x;
}

template <class T>
struct Encoded {
  Tensor<T> bottleneck;        // (H/32, W/32, 8C)
  std::vector<Tensor<T>> skips;  // 1/4, 1/8, 1/16 scale
};

/// Runs embed + four stages. image: (H, W, in_channels).
template <class T>
Encoded<T> encode(const Tensor<T>& image, const ModelParams<T>& p, const NetworkConfig& cfg) {
  if (image.rank() != 3 || image.size(0) != cfg.input_size || image.size(1) != cfg.input_size ||
      image.size(2) != cfg.in_channels) {
    throw DimensionError("encode: image " + to_string(image.shape()) + " does not match configured input (" +
                         std::to_string(cfg.input_size) + "," + std::to_string(cfg.input_size) + "," +
                         std::to_string(cfg.in_channels) + ")");
  }
  Encoded<T> out;
  Tensor<T> x = token_embed(image, p.embed_w, p.embed_b);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    x = run_blocks(x, p.encoder[s].blocks, cfg.attention(s));
    if (s + 1 < kNumStages) {
      out.skips.push_back(x);
      x = downsample(x, p.encoder[s].down_w, p.encoder[s].down_b);
    }
  }
  out.bottleneck = x;
  return out;
}

/// Mirror of encode: (H/32, W/32, 8C) -> (H/4, W/4, C). Skips are fused from
/// the finest scale outward, so fewer than three drop the 1/16 scale first.
template <class T>
Tensor<T> decode(const Tensor<T>& bottleneck, const std::vector<Tensor<T>>& skips, const ModelParams<T>& p,
                 const NetworkConfig& cfg) {
  Tensor<T> x = bottleneck;
  for (std::size_t s = kNumStages; s-- > 0;) {
    x = run_blocks(x, p.decoder[s].blocks, cfg.attention(s));
    if (s == 0) break;
    x = apply_upsample(x, p.decoder[s].up, cfg, 2);
    const std::size_t target = s - 1;
    if (target < cfg.skip_connections) {
      if (target >= skips.size()) throw ContractError("decode: missing skip tensor for stage " + std::to_string(s));
      x = skip_fuse(x, skips[target], p.decoder[target].fuse_w, p.decoder[target].fuse_b);
    }
  }
  return x;
}

/// 4x upsample then per-pixel linear to class logits.
template <class T>
Tensor<T> head(const Tensor<T>& features, const ModelParams<T>& p, const NetworkConfig& cfg) {
  return linear(apply_upsample(features, p.head_up, cfg, 4), p.classifier_w, p.classifier_b);
}

/// (H, W, in_channels) image -> (H, W, num_classes) logits.
template <class T>
Tensor<T> forward(const Tensor<T>& image, const ModelParams<T>& p, const NetworkConfig& cfg) {
  Encoded<T> enc = encode(image, p, cfg);
  return head(decode(enc.bottleneck, enc.skips, p, cfg), p, cfg);
}

/// Per-pixel argmax of (H, W, K) logits.
template <class T>
std::vector<std::uint8_t> argmax_mask(const Tensor<T>& logits) {
  const std::size_t k = logits.shape().back(), n = logits.numel() / k;
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    mask[i] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

// ---------------------------------------------------------------- analytic counts

namespace detail {

inline std::uint64_t block_params(std::uint64_t c, std::uint64_t ratio, bool lepe) {
  const std::uint64_t hidden = c * ratio;
  return 4 * c * c            // wq, wk, wv, wo
         + (lepe ? 9 * c : 0)  // depthwise kernel on V
         + 4 * c               // two layer norms
         + c * hidden + hidden + hidden * c + c;
}

inline std::uint64_t upsample_params(const NetworkConfig& cfg, std::uint64_t cin, std::uint64_t cout,
                                     std::uint64_t sigma) {
  std::uint64_t n = 0;
  switch (cfg.upsampler) {
    case Upsampler::carafe: {
      const std::uint64_t kc = sigma * sigma * cfg.k_up * cfg.k_up;
      n += cin * cfg.c_mid + cfg.c_mid + cfg.k_encoder * cfg.k_encoder * cfg.c_mid * kc + kc;
      break;
    }
    case Upsampler::bilinear: break;
    case Upsampler::transposed_conv: return cin * sigma * sigma * cout + cout;
  }
  if (cin != cout) n += cin * cout + cout;
  return n;
}

}  // namespace detail

inline std::uint64_t count_params(const NetworkConfig& cfg) {
  cfg.validate();
  const std::uint64_t c = cfg.embed_dim;
  std::uint64_t n = 49 * cfg.in_channels * c + c;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::uint64_t d = cfg.stage_dim(s);
    n += 2 * cfg.stages[s].depth * detail::block_params(d, cfg.mlp_ratio, cfg.lepe);  // encoder + decoder
    if (s + 1 < kNumStages) n += 9 * d * 2 * d + 2 * d;                                  // downsample
    if (s > 0) n += detail::upsample_params(cfg, d, d / 2, 2);
    if (s < cfg.skip_connections) n += 2 * d * d + d;
  }
  n += detail::upsample_params(cfg, c, c, 4);
  n += c * cfg.num_classes + cfg.num_classes;
  return n;
}

/// Multiply-accumulate counts by category for one forward pass. Elementwise
/// work (norms, softmax, activations, residual adds, bias adds) is not counted.
struct FlopBreakdown {
  std::uint64_t conv = 0;       // embed, downsample, 1x1 reduce / fuse
  std::uint64_t linear = 0;     // q/k/v/o projections, MLP, classifier
  std::uint64_t attention = 0;  // QK^T and AV products inside stripes
  std::uint64_t upsample = 0;   // CARAFE predictor + reassembly, transposed conv, bilinear taps
  std::uint64_t total() const { return conv + linear + attention + upsample; }
};

namespace detail {

inline void add_block_flops(FlopBreakdown& f, std::uint64_t res, std::uint64_t c, std::uint64_t sw,
                            std::uint64_t ratio, bool lepe) {
  const std::uint64_t tokens = res * res;
  f.linear += tokens * (4 * c * c + 2 * c * c * ratio);
  // each half of the channels attends over sw * res tokens (stripe length), QK^T plus AV
  const std::uint64_t stripe_len = sw * res;
  f.attention += 2 * (2 * tokens * stripe_len * (c / 2));
  if (lepe) f.conv += tokens * 9 * c;
}

inline void add_upsample_flops(FlopBreakdown& f, const NetworkConfig& cfg, std::uint64_t res, std::uint64_t cin,
                               std::uint64_t cout, std::uint64_t sigma) {
  const std::uint64_t in_px = res * res, out_px = in_px * sigma * sigma;
  switch (cfg.upsampler) {
    case Upsampler::carafe: {
      const std::uint64_t kk = cfg.k_up * cfg.k_up;
      f.upsample += in_px * cin * cfg.c_mid;
      f.upsample += in_px * cfg.k_encoder * cfg.k_encoder * cfg.c_mid * sigma * sigma * kk;
      f.upsample += out_px * kk * cin;
      break;
    }
    case Upsampler::bilinear: f.upsample += out_px * 4 * cin; break;
    case Upsampler::transposed_conv: f.upsample += in_px * cin * sigma * sigma * cout; return;
  }
  if (cin != cout) f.conv += out_px * cin * cout;
}

}  // namespace detail

inline FlopBreakdown count_flop_breakdown(const NetworkConfig& cfg) {
  cfg.validate();
  FlopBreakdown f;
  const std::uint64_t c = cfg.embed_dim;
  const std::uint64_t r0 = cfg.stage_resolution(0);
  f.conv += r0 * r0 * 49 * cfg.in_channels * c;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::uint64_t d = cfg.stage_dim(s), res = cfg.stage_resolution(s);
    for (std::size_t b = 0; b < 2 * cfg.stages[s].depth; ++b)
      detail::add_block_flops(f, res, d, cfg.stages[s].sw, cfg.mlp_ratio, cfg.lepe);
    if (s + 1 < kNumStages) f.conv += (res / 2) * (res / 2) * 9 * d * 2 * d;
    if (s > 0) detail::add_upsample_flops(f, cfg, res, d, d / 2, 2);
    if (s < cfg.skip_connections) f.conv += res * res * 2 * d * d;
  }
  detail::add_upsample_flops(f, cfg, r0, c, c, 4);
  f.linear += static_cast<std::uint64_t>(cfg.input_size) * cfg.input_size * c * cfg.num_classes;
  return f;
}

/// Forward-pass FLOPs, reported as multiply-accumulates (one MAC = one FLOP).
inline std::uint64_t count_flops(const NetworkConfig& cfg) { return count_flop_breakdown(cfg).total(); }

/// Reference figures the standard configuration is calibrated against.
inline constexpr double kReferenceParams = 23.57e6;
inline constexpr double kReferenceFlops = 4.72e9;

}  // namespace cswin
