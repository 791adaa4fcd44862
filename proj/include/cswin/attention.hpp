#pragma once

// Cross-shaped window self-attention. Half of the heads attend within
// horizontal stripes (sw full-width rows), the other half within vertical
// stripes (sw full-height columns); the two groups are concatenated along
// channels and mixed by an output projection.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/ops.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

enum class StripeDirection { horizontal, vertical };

inline const char* to_string(StripeDirection d) {
  return d == StripeDirection::horizontal ? "horizontal" : "vertical";
}

struct StripePartition {
  StripeDirection direction = StripeDirection::horizontal;
  std::size_t sw = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t count = 0;  // H/sw horizontal, W/sw vertical
  /// [begin, end) row ranges (horizontal) or column ranges (vertical).
  std::vector<std::pair<std::size_t, std::size_t>> stripes;

  /// Tokens per stripe.
  std::size_t length() const { return direction == StripeDirection::horizontal ? sw * width : height * sw; }
};

inline StripePartition make_partition(std::size_t height, std::size_t width, StripeDirection dir, std::size_t sw) {
  const std::size_t extent = dir == StripeDirection::horizontal ? height : width;
  if (sw == 0 || extent % sw != 0) {
    throw ConfigError(std::string("stripe width ") + std::to_string(sw) + " does not divide " +
                      (dir == StripeDirection::horizontal ? "height " : "width ") + std::to_string(extent));
  }
  StripePartition p{dir, sw, height, width, extent / sw, {}};
  for (std::size_t i = 0; i < p.count; ++i) p.stripes.emplace_back(i * sw, (i + 1) * sw);
  return p;
}

template <class T>
struct Stripes {
  StripePartition partition;
  std::vector<Tensor<T>> tensors;  // sw x W x C (horizontal) or H x sw x C (vertical)
};

template <class T>
Stripes<T> partition(const Tensor<T>& x, StripeDirection dir, std::size_t sw) {
  if (x.rank() != 3) throw DimensionError("partition: expected (H,W,C), got " + to_string(x.shape()));
  const std::size_t h = x.size(0), w = x.size(1), c = x.size(2);
  Stripes<T> out{make_partition(h, w, dir, sw), {}};
  const std::size_t n = out.partition.count;
  Tensor<T> grouped = dir == StripeDirection::horizontal
                          ? reshape(x, {n, sw, w, c})
                          : permute(reshape(x, {h, n, sw, c}), {1, 0, 2, 3});
  for (auto& piece : split(grouped, std::vector<std::size_t>(n, 1), 0)) {
    out.tensors.push_back(dir == StripeDirection::horizontal ? reshape(piece, {sw, w, c})
                                                             : reshape(piece, {h, sw, c}));
  }
  return out;
}

/// Inverse of partition().
template <class T>
Tensor<T> merge_stripes(const Stripes<T>& s) {
  const auto& p = s.partition;
  if (s.tensors.size() != p.count) throw DimensionError("merge_stripes: stripe count mismatch");
  if (p.direction == StripeDirection::horizontal) return concat(s.tensors, 0);
  return concat(s.tensors, 1);
}

struct AttentionConfig {
  std::size_t heads = 2;
  std::size_t sw = 1;
  std::size_t channels = 0;
  bool lepe = false;

  std::size_t head_dim() const { return channels / heads; }

  void validate() const {
    if (heads == 0 || heads % 2 != 0) {
      throw ConfigError("head count must be even and positive, got " + std::to_string(heads));
    }
    if (channels == 0 || channels % heads != 0) {
      throw ConfigError("channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
    }
    if (sw == 0) throw ConfigError("stripe width must be positive");
  }
  void validate(std::size_t height, std::size_t width) const {
    validate();
    make_partition(height, width, StripeDirection::horizontal, sw);
    make_partition(height, width, StripeDirection::vertical, sw);
  }
};

template <class T>
struct CSWinBlockParams {
  // Columns [n*d, (n+1)*d) of wq/wk/wv are head n's C x d projection; heads
  // 0..N/2-1 form the horizontal group.
  Tensor<T> wq, wk, wv;
  Tensor<T> wo;    // C x C
  Tensor<T> lepe;  // 3 x 3 x C depthwise kernel on V, undefined when disabled
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  std::size_t channels() const { return wq.size(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "attn.wq", wq);
    f(prefix + "attn.wk", wk);
    f(prefix + "attn.wv", wv);
    f(prefix + "attn.wo", wo);
    if (lepe.defined()) f(prefix + "attn.lepe", lepe);
    f(prefix + "norm1.gamma", ln1_gamma);
    f(prefix + "norm1.beta", ln1_beta);
    f(prefix + "norm2.gamma", ln2_gamma);
    f(prefix + "norm2.beta", ln2_beta);
    f(prefix + "mlp.fc1.weight", mlp_w1);
    f(prefix + "mlp.fc1.bias", mlp_b1);
    f(prefix + "mlp.fc2.weight", mlp_w2);
    f(prefix + "mlp.fc2.bias", mlp_b2);
  }

  static CSWinBlockParams init(std::size_t c, std::size_t mlp_ratio, bool with_lepe, Rng& rng) {
    CSWinBlockParams p;
    const std::size_t hidden = c * mlp_ratio;
    p.wq = trunc_normal_tensor<T>({c, c}, rng, 0.02);
    p.wk = trunc_normal_tensor<T>({c, c}, rng, 0.02);
    p.wv = trunc_normal_tensor<T>({c, c}, rng, 0.02);
    p.wo = trunc_normal_tensor<T>({c, c}, rng, 0.02);
    if (with_lepe) p.lepe = trunc_normal_tensor<T>({3, 3, c}, rng, 0.02);
    p.ln1_gamma = Tensor<T>({c}, T(1));
    p.ln1_beta = Tensor<T>({c});
    p.ln2_gamma = Tensor<T>({c}, T(1));
    p.ln2_beta = Tensor<T>({c});
    p.mlp_w1 = trunc_normal_tensor<T>({c, hidden}, rng, 0.02);
    p.mlp_b1 = Tensor<T>({hidden});
    p.mlp_w2 = trunc_normal_tensor<T>({hidden, c}, rng, 0.02);
    p.mlp_b2 = Tensor<T>({c});
    return p;
  }
};

/// Single-head attention inside one stripe. stripe: [a, b, C]; projections
/// [C, d]; optional lepe kernel [3, 3, d]. Returns [a, b, d].
template <class T>
Tensor<T> stripe_attention(const Tensor<T>& stripe, const Tensor<T>& wq, const Tensor<T>& wk,
                           const Tensor<T>& wv, std::size_t head_dim, const Tensor<T>& lepe = {}) {
  if (stripe.rank() != 3) throw DimensionError("stripe_attention: expected (a,b,C), got " + to_string(stripe.shape()));
  const std::size_t a = stripe.size(0), b = stripe.size(1), c = stripe.size(2);
  for (const Tensor<T>* w : {&wq, &wk, &wv}) {
    if (w->shape() != Shape{c, head_dim}) {
      throw DimensionError("stripe_attention: projection " + to_string(w->shape()) + " expected (" +
                           std::to_string(c) + "," + std::to_string(head_dim) + ")");
    }
  }
  Tensor<T> tokens = reshape(stripe, {a * b, c});
  Tensor<T> q = matmul(tokens, wq), k = matmul(tokens, wk), v = matmul(tokens, wv);
  Tensor<T> scores = scale(matmul(q, permute(k, {1, 0})), T(1) / std::sqrt(static_cast<T>(head_dim)));
  Tensor<T> y = matmul(softmax(scores, -1), v);
  if (lepe.defined()) y = add(y, reshape(depthwise_conv2d(reshape(v, {a, b, head_dim}), lepe, 1, 1), {a * b, head_dim}));
  return reshape(y, {a, b, head_dim});
}

namespace detail {

/// Attention for a group of `heads` heads over already-projected q, k, v
/// ([H, W, heads*d]); every head uses the same stripe direction and width.
template <class T>
Tensor<T> grouped_stripe_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                                   StripeDirection dir, std::size_t sw, const Tensor<T>& lepe) {
  const std::size_t h = q.size(0), w = q.size(1), c = q.size(2);
  const std::size_t d = c / heads;
  const StripePartition part = make_partition(h, w, dir, sw);
  const std::size_t n = part.count, len = part.length();
  const bool horiz = dir == StripeDirection::horizontal;

  // [H,W,c] -> [n, a, b, c] stripe geometry -> [n, L, c] tokens
  auto to_stripes = [&](const Tensor<T>& t) {
    return horiz ? reshape(t, {n, sw, w, c}) : permute(reshape(t, {h, n, sw, c}), {1, 0, 2, 3});
  };
  auto to_heads = [&](const Tensor<T>& t) {
    if (heads == 1) return reshape(t, {n, len, d});
    return reshape(permute(reshape(t, {n, len, heads, d}), {0, 2, 1, 3}), {n * heads, len, d});
  };
  Tensor<T> vs = to_stripes(v);
  Tensor<T> qh = to_heads(to_stripes(q)), kh = to_heads(to_stripes(k)), vh = to_heads(vs);

  Tensor<T> scores = scale(bmm(qh, permute(kh, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(d)));
  Tensor<T> y = bmm(softmax(scores, -1), vh);
  y = heads == 1 ? reshape(y, {n, len, c}) : reshape(permute(reshape(y, {n, heads, len, d}), {0, 2, 1, 3}), {n, len, c});
  if (lepe.defined()) y = add(y, reshape(depthwise_conv2d(vs, lepe, 1, 1), {n, len, c}));

  if (horiz) return reshape(y, {h, w, c});
  return reshape(permute(reshape(y, {n, h, sw, c}), {1, 0, 2, 3}), {h, w, c});
}

template <class T>
void check_group_projection(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                            std::size_t heads, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected (H,W,C), got " + to_string(x.shape()));
  if (heads == 0) throw ConfigError(std::string(op) + ": zero heads");
  for (const Tensor<T>* wt : {&wq, &wk, &wv}) {
    if (wt->rank() != 2 || wt->size(0) != x.size(2) || wt->size(1) != wq.size(1) || wt->size(1) % heads != 0) {
      throw DimensionError(std::string(op) + ": projection " + to_string(wt->shape()) + " incompatible with " +
                           std::to_string(heads) + " heads over C=" + std::to_string(x.size(2)));
    }
  }
}

}  // namespace detail

/// Horizontal-stripe attention for one head group. x: [H,W,C]; projections
/// [C, heads*d] with head n owning columns [n*d, (n+1)*d). Returns [H,W,heads*d].
template <class T>
Tensor<T> h_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                      std::size_t heads, std::size_t sw, const Tensor<T>& lepe = {}) {
  detail::check_group_projection(x, wq, wk, wv, heads, "h_attention");
  return detail::grouped_stripe_attention(linear(x, wq, Tensor<T>{}), linear(x, wk, Tensor<T>{}),
                                          linear(x, wv, Tensor<T>{}), heads, StripeDirection::horizontal, sw, lepe);
}

/// Vertical-stripe counterpart of h_attention.
template <class T>
Tensor<T> v_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                      std::size_t heads, std::size_t sw, const Tensor<T>& lepe = {}) {
  detail::check_group_projection(x, wq, wk, wv, heads, "v_attention");
  return detail::grouped_stripe_attention(linear(x, wq, Tensor<T>{}), linear(x, wk, Tensor<T>{}),
                                          linear(x, wv, Tensor<T>{}), heads, StripeDirection::vertical, sw, lepe);
}

template <class T>
struct HeadGroups {
  Tensor<T> horizontal;  // [H, W, C/2]
  Tensor<T> vertical;    // [H, W, C/2]
};

/// Both head-group outputs before the output projection.
template <class T>
HeadGroups<T> cswin_head_groups(const Tensor<T>& x, const CSWinBlockParams<T>& p, const AttentionConfig& cfg) {
  if (x.rank() != 3) throw DimensionError("cswin_attention: expected (H,W,C), got " + to_string(x.shape()));
  cfg.validate(x.size(0), x.size(1));
  const std::size_t c = cfg.channels;
  if (x.size(2) != c || p.wq.shape() != Shape{c, c} || p.wk.shape() != Shape{c, c} || p.wv.shape() != Shape{c, c}) {
    throw DimensionError("cswin_attention: input " + to_string(x.shape()) + " vs configured channels " +
                         std::to_string(c));
  }
  if (cfg.lepe && !p.lepe.defined()) throw ConfigError("cswin_attention: LePE enabled but no kernel provided");
  const std::size_t half = c / 2, g = cfg.heads / 2;
  auto q = split(linear(x, p.wq, Tensor<T>{}), {half, half}, 2);
  auto k = split(linear(x, p.wk, Tensor<T>{}), {half, half}, 2);
  auto v = split(linear(x, p.wv, Tensor<T>{}), {half, half}, 2);
  Tensor<T> lepe_h, lepe_v;
  if (cfg.lepe) {
    auto parts = split(p.lepe, {half, half}, 2);
    lepe_h = parts[0];
    lepe_v = parts[1];
  }
  return {detail::grouped_stripe_attention(q[0], k[0], v[0], g, StripeDirection::horizontal, cfg.sw, lepe_h),
          detail::grouped_stripe_attention(q[1], k[1], v[1], g, StripeDirection::vertical, cfg.sw, lepe_v)};
}

/// concat(horizontal heads, vertical heads) * W^o; maps (H,W,C) -> (H,W,C).
template <class T>
Tensor<T> cswin_attention(const Tensor<T>& x, const CSWinBlockParams<T>& p, const AttentionConfig& cfg) {
  if (p.wo.shape() != Shape{cfg.channels, cfg.channels}) {
    throw DimensionError("cswin_attention: output projection must be C x C, got " + to_string(p.wo.shape()));
  }
  auto groups = cswin_head_groups(x, p, cfg);
  return linear(concat(std::vector<Tensor<T>>{groups.horizontal, groups.vertical}, 2), p.wo, Tensor<T>{});
}

/// Pre-norm transformer block:
///   x' = attn(LN(x)) + x
///   y  = MLP(LN(x')) + x'
template <class T>
Tensor<T> cswin_block(const Tensor<T>& x, const CSWinBlockParams<T>& p, const AttentionConfig& cfg,
                      T eps = T(1e-5)) {
  Tensor<T> xa = add(cswin_attention(layer_norm(x, p.ln1_gamma, p.ln1_beta, eps), p, cfg), x);
  Tensor<T> hidden = gelu(linear(layer_norm(xa, p.ln2_gamma, p.ln2_beta, eps), p.mlp_w1, p.mlp_b1));
  return add(linear(hidden, p.mlp_w2, p.mlp_b2), xa);
}

/// Full multi-head self-attention over all H*W tokens with the block's
/// projections (no stripes); the baseline that `bench` compares against.
template <class T>
Tensor<T> global_attention(const Tensor<T>& x, const CSWinBlockParams<T>& p, std::size_t heads) {
  if (x.rank() != 3) throw DimensionError("global_attention: expected (H,W,C), got " + to_string(x.shape()));
  const std::size_t h = x.size(0);
  Tensor<T> y = detail::grouped_stripe_attention(linear(x, p.wq, Tensor<T>{}), linear(x, p.wk, Tensor<T>{}),
                                                 linear(x, p.wv, Tensor<T>{}), heads, StripeDirection::horizontal, h,
                                                 Tensor<T>{});
  return linear(y, p.wo, Tensor<T>{});
}

/// Multiply-accumulates of cswin_attention on an (h, w, c) map: four C x C
/// projections plus QK^T and AV inside each group's stripes.
inline std::uint64_t cswin_attention_macs(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t sw) {
  const std::uint64_t tokens = h * w;
  return 4 * tokens * c * c + 2 * tokens * (sw * w) * (c / 2) + 2 * tokens * (sw * h) * (c / 2);
}

inline std::uint64_t global_attention_macs(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
  const std::uint64_t tokens = h * w;
  return 4 * tokens * c * c + 2 * tokens * tokens * c;
}

}  // namespace cswin
