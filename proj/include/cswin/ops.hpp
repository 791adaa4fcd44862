#pragma once

// Differentiable primitives. Feature maps are channel-last (H, W, C); all ops
// are single-sample. When a Tape is active and an input requires_grad, the op
// records its gradient rule on that tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c);
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape " + to_string(a) + " vs " + to_string(b));
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                                   const char* op) {
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be >= 1");
  if (k > in + 2 * pad) {
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(k) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  detail::record<T>("add", out, {a, b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  detail::record<T>("sub", out, {a, b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

/// Elementwise (Hadamard) product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  detail::record<T>("mul", out, {a, b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * s;
  detail::record<T>("scale", out, {a}, [a, out, s]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
  return out;
}

/// x + bias, with bias broadcast along the last axis.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.size(0) != x.shape().back()) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " vs input " + to_string(x.shape()));
  }
  const std::size_t n = bias.size(0);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + bias[i % n];
  detail::record<T>("add_bias", out, {x, bias}, [x, bias, out, n]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  detail::record<T>("sum", out, {x}, [x, out]() mutable {
    const T g = out.grad()[0];
    for (T& gx : x.mutable_grad()) gx += g;
  });
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kBeta = T(0.044715);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kAlpha * (v + kBeta * v * v * v)));
  }
  detail::record<T>("gelu", out, {x}, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = x[i];
      const T t = std::tanh(kAlpha * (v + kBeta * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kAlpha * (T(1) + T(3) * kBeta * v * v);
      gx[i] += g[i] * d;
    }
  });
  return out;
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor<T> out({m, n});
  detail::gemm_nn(m, n, k, a.vec().data(), b.vec().data(), out.vec().data());
  detail::record<T>("matmul", out, {a, b}, [a, b, out, m, n, k]() mutable {
    const T* g = out.grad().data();
    if (a.requires_grad()) detail::gemm_nt(m, k, n, g, b.vec().data(), a.mutable_grad().data());
    if (b.requires_grad()) detail::gemm_tn(k, n, m, a.vec().data(), g, b.mutable_grad().data());
  });
  return out;
}

/// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.size(0) != b.size(0) || a.size(2) != b.size(1)) {
    throw DimensionError("bmm: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t batch = a.size(0), m = a.size(1), k = a.size(2), n = b.size(2);
  Tensor<T> out({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_nn(m, n, k, a.vec().data() + s * m * k, b.vec().data() + s * k * n,
                    out.vec().data() + s * m * n);
  }
  detail::record<T>("bmm", out, {a, b}, [a, b, out, batch, m, n, k]() mutable {
    const T* g = out.grad().data();
    for (std::size_t s = 0; s < batch; ++s) {
      if (a.requires_grad())
        detail::gemm_nt(m, k, n, g + s * m * n, b.vec().data() + s * k * n, a.mutable_grad().data() + s * m * k);
      if (b.requires_grad())
        detail::gemm_tn(k, n, m, a.vec().data() + s * m * k, g + s * m * n, b.mutable_grad().data() + s * k * n);
    }
  });
  return out;
}

// ---------------------------------------------------------------- normalization

template <class T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const Shape& s = x.shape();
  const std::size_t n = s[ax];
  if (n == 0) throw DimensionError("softmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];

  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }
  detail::record<T>("softmax", out, {x}, [x, out, outer, inner, n]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * out[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += out[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return out;
}

/// Normalizes over the last axis then applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm: empty channel axis");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm: affine params must have shape (" + std::to_string(c) + ")");
  }
  const std::size_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.vec().data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xr[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = gamma[j] * h + beta[j];
    }
  }
  detail::record<T>("layer_norm", out, {x, gamma, beta},
                    [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c]() mutable {
                      auto g = out.grad();
                      if (gamma.requires_grad() || beta.requires_grad()) {
                        std::vector<T> dg(c, T(0)), db(c, T(0));
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          dg[i % c] += g[i] * xhat[i];
                          db[i % c] += g[i];
                        }
                        if (gamma.requires_grad()) {
                          auto gg = gamma.mutable_grad();
                          for (std::size_t j = 0; j < c; ++j) gg[j] += dg[j];
                        }
                        if (beta.requires_grad()) {
                          auto gb = beta.mutable_grad();
                          for (std::size_t j = 0; j < c; ++j) gb[j] += db[j];
                        }
                      }
                      if (!x.requires_grad()) return;
                      auto gx = x.mutable_grad();
                      std::vector<T> dh(c);
                      for (std::size_t r = 0; r < rows; ++r) {
                        T m1 = 0, m2 = 0;
                        for (std::size_t j = 0; j < c; ++j) {
                          dh[j] = g[r * c + j] * gamma[j];
                          m1 += dh[j];
                          m2 += dh[j] * xhat[r * c + j];
                        }
                        m1 /= static_cast<T>(c);
                        m2 /= static_cast<T>(c);
                        for (std::size_t j = 0; j < c; ++j) {
                          gx[r * c + j] += inv_std[r] * (dh[j] - m1 - xhat[r * c + j] * m2);
                        }
                      }
                    });
  return out;
}

// ---------------------------------------------------------------- shape ops

/// Same data, new shape. Always copies, so gradients never alias.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), x.vec());
  detail::record<T>("reshape", out, {x}, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute: order rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t a : order) {
    if (a >= r || seen[a]) throw DimensionError("permute: order is not a permutation");
    seen[a] = true;
  }
  const Shape& in = x.shape();
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = in[order[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  // stride into the input for each output axis
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_stride[order[i]];

  // gather[i] = input offset of output element i
  std::vector<std::size_t> gather(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < gather.size(); ++i) {
      gather[i] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += step[d];
        if (idx[d] < os[d]) break;
        off -= step[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out(os);
  for (std::size_t i = 0; i < gather.size(); ++i) out[i] = x[gather[i]];
  detail::record<T>("permute", out, {x}, [x, out, gather = std::move(gather)]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[gather[i]] += g[i];
  });
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& ts, long axis) {
  if (ts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis(axis, ts[0].rank(), "concat");
  Shape os = ts[0].shape();
  os[ax] = 0;
  for (const auto& t : ts) {
    if (t.rank() != os.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < os.size(); ++d) {
      if (d != ax && t.size(d) != os[d]) {
        throw DimensionError("concat: " + to_string(t.shape()) + " incompatible with " + to_string(ts[0].shape()));
      }
    }
    os[ax] += t.size(ax);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= os[d];
  for (std::size_t d = ax + 1; d < os.size(); ++d) inner *= os[d];
  const std::size_t out_row = os[ax] * inner;

  Tensor<T> out(os);
  std::size_t col = 0;
  for (const auto& t : ts) {
    const std::size_t w = t.size(ax) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(t.vec().data() + o * w, w, out.vec().data() + o * out_row + col);
    }
    col += w;
  }
  detail::record<T>("concat", out, ts, [ts, out, outer, inner, out_row, ax]() mutable {
    auto g = out.grad();
    std::size_t c = 0;
    for (auto& t : ts) {
      const std::size_t w = t.size(ax) * inner;
      if (t.requires_grad()) {
        auto gt = t.mutable_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < w; ++j) gt[o * w + j] += g[o * out_row + c + j];
      }
      c += w;
    }
  });
  return out;
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<std::size_t>& sizes, long axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "split");
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != x.size(ax)) {
    throw DimensionError("split: sizes do not sum to extent " + std::to_string(x.size(ax)));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.size(d);
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.size(d);
  const std::size_t in_row = x.size(ax) * inner;

  std::vector<Tensor<T>> parts;
  std::size_t col = 0;
  for (std::size_t sz : sizes) {
    Shape ps = x.shape();
    ps[ax] = sz;
    Tensor<T> part(ps);
    const std::size_t w = sz * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.vec().data() + o * in_row + col, w, part.vec().data() + o * w);
    }
    detail::record<T>("split", part, {x}, [x, part, outer, w, in_row, col]() mutable {
      auto g = part.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < w; ++j) gx[o * in_row + col + j] += g[o * w + j];
    });
    parts.push_back(std::move(part));
    col += w;
  }
  return parts;
}

/// [H, W, s*s*C] -> [s*H, s*W, C]; input channel (di*s + dj)*C + c lands at (s*i + di, s*j + dj, c).
template <class T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t s) {
  if (x.rank() != 3 || s == 0 || x.size(2) % (s * s) != 0) {
    throw DimensionError("depth_to_space: input " + to_string(x.shape()) + " ratio " + std::to_string(s));
  }
  const std::size_t h = x.size(0), w = x.size(1), c = x.size(2) / (s * s);
  auto t = reshape(x, {h, w, s, s, c});
  t = permute(t, {0, 2, 1, 3, 4});
  return reshape(t, {h * s, w * s, c});
}

// ---------------------------------------------------------------- convolution

/// Patch gather for conv2d: [H,W,C] -> [H'*W', kh*kw*C], columns ordered (ky, kx, c).
template <class T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3) throw DimensionError("im2col: expected (H,W,C), got " + to_string(x.shape()));
  const std::size_t h = x.size(0), w = x.size(1), c = x.size(2);
  const std::size_t ho = detail::conv_out_extent(h, kh, stride, pad, "conv2d");
  const std::size_t wo = detail::conv_out_extent(w, kw, stride, pad, "conv2d");
  const std::size_t cols = kh * kw * c;
  Tensor<T> out({ho * wo, cols});
  // src[i] = input offset for column entry i, or npos for zero padding
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> src(ho * wo * kh * kw, npos);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          const std::size_t slot = ((oy * wo + ox) * kh + ky) * kw + kx;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
          src[slot] = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          std::copy_n(x.vec().data() + src[slot], c, out.vec().data() + slot * c);
        }
      }
    }
  }
  detail::record<T>("im2col", out, {x}, [x, out, src = std::move(src), c]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t slot = 0; slot < src.size(); ++slot) {
      if (src[slot] == npos) continue;
      for (std::size_t k = 0; k < c; ++k) gx[src[slot] + k] += g[slot * c + k];
    }
  });
  return out;
}

/// Cross-correlation. x: [H,W,Cin], w: [kh,kw,Cin,Cout], bias: [Cout] or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  if (x.rank() != 3 || w.rank() != 4 || w.size(2) != x.size(2)) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  }
  const std::size_t kh = w.size(0), kw = w.size(1), cin = w.size(2), cout = w.size(3);
  const std::size_t ho = detail::conv_out_extent(x.size(0), kh, stride, pad, "conv2d");
  const std::size_t wo = detail::conv_out_extent(x.size(1), kw, stride, pad, "conv2d");
  Tensor<T> cols = (kh == 1 && kw == 1 && stride == 1 && pad == 0) ? reshape(x, {ho * wo, cin})
                                                                   : im2col(x, kh, kw, stride, pad);
  Tensor<T> y = matmul(cols, reshape(w, {kh * kw * cin, cout}));
  if (bias.defined()) y = add_bias(y, bias);
  return reshape(y, {ho, wo, cout});
}

/// Per-channel convolution. x: [H,W,C] or [B,H,W,C]; w: [kh,kw,C].
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  if ((x.rank() != 3 && x.rank() != 4) || w.rank() != 3 || w.size(2) != x.shape().back()) {
    throw DimensionError("depthwise_conv2d: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t nb = batched ? x.size(0) : 1;
  const std::size_t h = x.size(batched ? 1 : 0), wd = x.size(batched ? 2 : 1), c = x.shape().back();
  const std::size_t kh = w.size(0), kw = w.size(1);
  const std::size_t ho = detail::conv_out_extent(h, kh, stride, pad, "depthwise_conv2d");
  const std::size_t wo = detail::conv_out_extent(wd, kw, stride, pad, "depthwise_conv2d");
  Shape os = batched ? Shape{nb, ho, wo, c} : Shape{ho, wo, c};
  Tensor<T> out(os);

  auto visit = [=](auto&& fn) {
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox)
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              const std::size_t xo = ((b * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)) * c;
              const std::size_t oo = ((b * ho + oy) * wo + ox) * c;
              const std::size_t wo_ = (ky * kw + kx) * c;
              fn(xo, oo, wo_);
            }
          }
  };
  visit([&](std::size_t xo, std::size_t oo, std::size_t woff) {
    for (std::size_t k = 0; k < c; ++k) out[oo + k] += x[xo + k] * w[woff + k];
  });
  detail::record<T>("depthwise_conv2d", out, {x, w}, [x, w, out, visit, c]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      visit([&](std::size_t xo, std::size_t oo, std::size_t woff) {
        for (std::size_t k = 0; k < c; ++k) gx[xo + k] += g[oo + k] * w[woff + k];
      });
    }
    if (w.requires_grad()) {
      auto gw = w.mutable_grad();
      visit([&](std::size_t xo, std::size_t oo, std::size_t woff) {
        for (std::size_t k = 0; k < c; ++k) gw[woff + k] += g[oo + k] * x[xo + k];
      });
    }
  });
  return out;
}

/// x: [..., Cin], w: [Cin, Cout], bias: [Cout] or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() == 0 || w.rank() != 2 || x.shape().back() != w.size(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  }
  const std::size_t rows = x.numel() / w.size(0);
  Tensor<T> y = matmul(x.rank() == 2 ? x : reshape(x, {rows, w.size(0)}), w);
  if (bias.defined()) y = add_bias(y, bias);
  Shape os = x.shape();
  os.back() = w.size(1);
  return os.size() == 2 ? y : reshape(y, os);
}

/// Bilinear resize by an integer factor, half-pixel centers (align_corners = false).
template <class T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 3 || factor == 0) throw DimensionError("bilinear_upsample: bad input " + to_string(x.shape()));
  const std::size_t h = x.size(0), w = x.size(1), c = x.size(2);
  const std::size_t ho = h * factor, wo = w * factor;
  struct Tap {
    std::size_t i0, i1;
    T l1;
  };
  auto taps = [factor](std::size_t n_out, std::size_t n_in) {
    std::vector<Tap> out(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
      if (src < 0) src = 0;
      std::size_t i0 = std::min(static_cast<std::size_t>(src), n_in - 1);
      std::size_t i1 = std::min(i0 + 1, n_in - 1);
      out[o] = {i0, i1, src - static_cast<T>(i0)};
    }
    return out;
  };
  auto ty = taps(ho, h), tx = taps(wo, w);
  Tensor<T> out({ho, wo, c});
  auto visit = [=](auto&& fn) {
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const Tap& a = ty[oy];
        const Tap& b = tx[ox];
        const std::size_t o = (oy * wo + ox) * c;
        fn(o, (a.i0 * w + b.i0) * c, (T(1) - a.l1) * (T(1) - b.l1));
        fn(o, (a.i0 * w + b.i1) * c, (T(1) - a.l1) * b.l1);
        fn(o, (a.i1 * w + b.i0) * c, a.l1 * (T(1) - b.l1));
        fn(o, (a.i1 * w + b.i1) * c, a.l1 * b.l1);
      }
  };
  visit([&](std::size_t o, std::size_t i, T wt) {
    for (std::size_t k = 0; k < c; ++k) out[o + k] += wt * x[i + k];
  });
  detail::record<T>("bilinear_upsample", out, {x}, [x, out, visit, c]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    visit([&](std::size_t o, std::size_t i, T wt) {
      for (std::size_t k = 0; k < c; ++k) gx[i + k] += wt * g[o + k];
    });
  });
  return out;
}

}  // namespace cswin
