#pragma once

// Finite-difference checks for every differentiable op, the CSWin block,
// CARAFE and a whole tiny network. Each case reduces its output to a scalar
// through a fixed random projection, sum(out * R).

#include <functional>
#include <string>
#include <vector>

#include "cswin/attention.hpp"
#include "cswin/carafe.hpp"
#include "cswin/gradcheck.hpp"
#include "cswin/loss.hpp"
#include "cswin/network.hpp"
#include "cswin/ops.hpp"
#include "cswin/random.hpp"

namespace cswin {

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(const GradCheckOptions&)> run;
};

namespace detail {

using D = Tensor<double>;
using Inputs = std::vector<D>;

inline D rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) { return uniform_tensor<double>(std::move(s), rng, lo, hi); }

/// sum(out * R) with R drawn once per output shape.
inline D project(const D& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, rand_t(out.shape(), rng)));
}

inline GradCheckCase unary_case(std::string name, std::function<D(const Inputs&)> f, Inputs in) {
  return {name, [f = std::move(f), in = std::move(in)](const GradCheckOptions& o) {
            return gradcheck([&](const Inputs& x) { return project(f(x), 99); }, in, o);
          }};
}

/// Re-draws every parameter at a scale where attention and CARAFE kernels
/// are far from uniform, so the check exercises non-trivial gradients.
inline void perturb_params(ModelParams<double>& p, std::uint64_t seed) {
  Rng rng(seed);
  p.visit([&](const std::string& name, D& t) {
    const bool norm_gain = name.find("gamma") != std::string::npos;
    const bool bias = t.rank() == 1 && !norm_gain;
    const double fan = t.rank() >= 2 ? static_cast<double>(t.numel() / t.shape().back()) : 1.0;
    for (double& v : t.data()) {
      if (norm_gain) v = rng.uniform(0.8, 1.2);
      else if (bias) v = rng.uniform(-0.1, 0.1);
      else v = rng.uniform(-1.0, 1.0) * std::sqrt(3.0 / fan);
    }
  });
}

}  // namespace detail

inline std::vector<GradCheckCase> primitive_gradcheck_cases() {
  using detail::D;
  using detail::Inputs;
  using detail::rand_t;
  using detail::unary_case;
  Rng r(2024);
  std::vector<GradCheckCase> cases;
  cases.push_back(unary_case("add", [](const Inputs& x) { return add(x[0], x[1]); }, {rand_t({3, 4}, r), rand_t({3, 4}, r)}));
  cases.push_back(unary_case("sub", [](const Inputs& x) { return sub(x[0], x[1]); }, {rand_t({3, 4}, r), rand_t({3, 4}, r)}));
  cases.push_back(unary_case("mul", [](const Inputs& x) { return mul(x[0], x[1]); }, {rand_t({3, 4}, r), rand_t({3, 4}, r)}));
  cases.push_back(unary_case("scale", [](const Inputs& x) { return scale(x[0], -1.7); }, {rand_t({5}, r)}));
  cases.push_back(unary_case("add_bias", [](const Inputs& x) { return add_bias(x[0], x[1]); }, {rand_t({2, 3, 4}, r), rand_t({4}, r)}));
  cases.push_back(unary_case("sum", [](const Inputs& x) { return sum(x[0]); }, {rand_t({2, 5}, r)}));
  cases.push_back(unary_case("mean", [](const Inputs& x) { return mean(x[0]); }, {rand_t({2, 5}, r)}));
  cases.push_back(unary_case("gelu", [](const Inputs& x) { return gelu(x[0]); }, {rand_t({4, 4}, r, -3, 3)}));
  cases.push_back(unary_case("matmul", [](const Inputs& x) { return matmul(x[0], x[1]); }, {rand_t({3, 5}, r), rand_t({5, 2}, r)}));
  cases.push_back(unary_case("bmm", [](const Inputs& x) { return bmm(x[0], x[1]); }, {rand_t({2, 3, 4}, r), rand_t({2, 4, 3}, r)}));
  cases.push_back(unary_case("softmax_last", [](const Inputs& x) { return softmax(x[0], -1); }, {rand_t({3, 5}, r, -2, 2)}));
  cases.push_back(unary_case("softmax_axis0", [](const Inputs& x) { return softmax(x[0], 0); }, {rand_t({4, 3, 2}, r, -2, 2)}));
  cases.push_back(unary_case("layer_norm", [](const Inputs& x) { return layer_norm(x[0], x[1], x[2]); },
                             {rand_t({3, 2, 6}, r), rand_t({6}, r, 0.5, 1.5), rand_t({6}, r)}));
  cases.push_back(unary_case("reshape", [](const Inputs& x) { return reshape(x[0], {6, 2}); }, {rand_t({3, 4}, r)}));
  cases.push_back(unary_case("permute", [](const Inputs& x) { return permute(x[0], {2, 0, 1}); }, {rand_t({2, 3, 4}, r)}));
  cases.push_back(unary_case("concat", [](const Inputs& x) { return concat(std::vector<D>{x[0], x[1]}, 1); },
                             {rand_t({2, 3, 2}, r), rand_t({2, 1, 2}, r)}));
  cases.push_back(unary_case("split", [](const Inputs& x) {
    auto parts = split(x[0], {1, 3}, 2);
    return concat(std::vector<D>{scale(parts[0], 2.0), parts[1]}, 2);
  }, {rand_t({2, 2, 4}, r)}));
  cases.push_back(unary_case("depth_to_space", [](const Inputs& x) { return depth_to_space(x[0], 2); }, {rand_t({2, 3, 8}, r)}));
  cases.push_back(unary_case("im2col", [](const Inputs& x) { return im2col(x[0], 3, 3, 2, 1); }, {rand_t({5, 4, 2}, r)}));
  cases.push_back(unary_case("conv2d_3x3_s1_p1", [](const Inputs& x) { return conv2d(x[0], x[1], x[2], 1, 1); },
                             {rand_t({5, 5, 2}, r), rand_t({3, 3, 2, 3}, r), rand_t({3}, r)}));
  cases.push_back(unary_case("conv2d_7x7_s4_p3", [](const Inputs& x) { return conv2d(x[0], x[1], x[2], 4, 3); },
                             {rand_t({8, 8, 3}, r), rand_t({7, 7, 3, 2}, r), rand_t({2}, r)}));
  cases.push_back(unary_case("conv2d_1x1", [](const Inputs& x) { return conv2d(x[0], x[1], x[2], 1, 0); },
                             {rand_t({3, 4, 3}, r), rand_t({1, 1, 3, 2}, r), rand_t({2}, r)}));
  cases.push_back(unary_case("depthwise_conv2d", [](const Inputs& x) { return depthwise_conv2d(x[0], x[1], 1, 1); },
                             {rand_t({4, 5, 3}, r), rand_t({3, 3, 3}, r)}));
  cases.push_back(unary_case("depthwise_conv2d_batched", [](const Inputs& x) { return depthwise_conv2d(x[0], x[1], 1, 1); },
                             {rand_t({2, 3, 4, 2}, r), rand_t({3, 3, 2}, r)}));
  cases.push_back(unary_case("linear", [](const Inputs& x) { return linear(x[0], x[1], x[2]); },
                             {rand_t({2, 3, 4}, r), rand_t({4, 5}, r), rand_t({5}, r)}));
  cases.push_back(unary_case("bilinear_upsample", [](const Inputs& x) { return bilinear_upsample(x[0], 2); }, {rand_t({3, 4, 2}, r)}));
  cases.push_back(unary_case("bilinear_upsample_x4", [](const Inputs& x) { return bilinear_upsample(x[0], 4); }, {rand_t({2, 3, 1}, r)}));

  Mask labels(3, 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels.labels[i] = static_cast<std::uint8_t>(r.below(3));
  labels.labels[0] = 0, labels.labels[1] = 1, labels.labels[2] = 2;
  const D logits = rand_t({3, 4, 3}, r, -2, 2);
  cases.push_back({"dice_loss", [labels, logits](const GradCheckOptions& o) {
                     return gradcheck([&](const Inputs& x) { return dice_loss(x[0], labels); }, {logits}, o);
                   }});
  cases.push_back({"cross_entropy_loss", [labels, logits](const GradCheckOptions& o) {
                     return gradcheck([&](const Inputs& x) { return cross_entropy_loss(x[0], labels); }, {logits}, o);
                   }});
  cases.push_back({"combined_loss", [labels, logits](const GradCheckOptions& o) {
                     return gradcheck([&](const Inputs& x) { return combined_loss(x[0], labels, LossConfig{}); }, {logits}, o);
                   }});
  return cases;
}

inline std::vector<GradCheckCase> component_gradcheck_cases() {
  using detail::D;
  using detail::Inputs;
  std::vector<GradCheckCase> cases;

  // CSWin attention and block, with and without LePE; inputs are the map and all block parameters
  for (bool lepe : {false, true}) {
    for (std::size_t sw : {1, 2}) {
      const std::string name = std::string(lepe ? "cswin_block_lepe" : "cswin_block") + "_sw" + std::to_string(sw);
      cases.push_back({name, [lepe, sw](const GradCheckOptions& o) {
                         Rng rng(11 + sw + (lepe ? 100 : 0));
                         const AttentionConfig acfg{4, sw, 8, lepe};
                         CSWinBlockParams<double> p = CSWinBlockParams<double>::init(8, 2, lepe, rng);
                         Inputs in{detail::rand_t({4, 4, 8}, rng)};
                         p.visit("", [&](const std::string&, D& t) {
                           for (double& v : t.data()) v += rng.uniform(-0.4, 0.4);
                           in.push_back(t);
                         });
                         return gradcheck([&](const Inputs& x) {
                           CSWinBlockParams<double> q;
                           std::size_t i = 1;
                           q = p;
                           q.visit("", [&](const std::string&, D& t) { t = x[i++]; });
                           return detail::project(cswin_block(x[0], q, acfg), 5);
                         }, in, o);
                       }});
    }
  }
  cases.push_back({"cswin_attention_rect", [](const GradCheckOptions& o) {
                     Rng rng(17);
                     const AttentionConfig acfg{2, 2, 4, false};
                     CSWinBlockParams<double> p = CSWinBlockParams<double>::init(4, 2, false, rng);
                     Inputs in{detail::rand_t({4, 6, 4}, rng), detail::rand_t({4, 4}, rng), detail::rand_t({4, 4}, rng),
                               detail::rand_t({4, 4}, rng), detail::rand_t({4, 4}, rng)};
                     return gradcheck([&](const Inputs& x) {
                       CSWinBlockParams<double> q = p;
                       q.wq = x[1], q.wk = x[2], q.wv = x[3], q.wo = x[4];
                       return detail::project(cswin_attention(x[0], q, acfg), 6);
                     }, in, o);
                   }});

  // CARAFE: map plus compressor/encoder parameters
  for (std::size_t sigma : {1, 2, 4}) {
    cases.push_back({"carafe_sigma" + std::to_string(sigma), [sigma](const GradCheckOptions& o) {
                       Rng rng(31 + sigma);
                       const UpsampleConfig ucfg{sigma, 3, 3, 4};
                       auto p = KernelPredictorParams<double>::init(3, ucfg, rng);
                       for (double& v : p.encoder_w.data()) v = rng.uniform(-0.5, 0.5);
                       Inputs in{detail::rand_t({3, 4, 3}, rng), p.compressor_w, p.compressor_b, p.encoder_w, p.encoder_b};
                       return gradcheck([&](const Inputs& x) {
                         KernelPredictorParams<double> q{x[1], x[2], x[3], x[4]};
                         return detail::project(carafe_upsample(x[0], q, ucfg), 8);
                       }, in, o);
                     }});
  }
  cases.push_back({"carafe_reassemble_k5", [](const GradCheckOptions& o) {
                     Rng rng(41);
                     const UpsampleConfig ucfg{2, 5, 3, 4};
                     Inputs in{detail::rand_t({3, 3, 2}, rng), detail::rand_t({6, 6, 25}, rng, 0.0, 0.1)};
                     return gradcheck([&](const Inputs& x) {
                       return detail::project(reassemble(x[0], ReassemblyKernelField<double>{x[1], 5}, ucfg), 9);
                     }, in, o);
                   }});
  cases.push_back({"transposed_conv_upsample", [](const GradCheckOptions& o) {
                     Rng rng(43);
                     Inputs in{detail::rand_t({2, 3, 4}, rng), detail::rand_t({4, 8}, rng), detail::rand_t({2}, rng)};
                     return gradcheck([&](const Inputs& x) {
                       return detail::project(transposed_conv_upsample(x[0], x[1], x[2], 2), 10);
                     }, in, o);
                   }});
  return cases;
}

/// End-to-end check of the tiny network under `upsampler`: image plus every
/// parameter tensor (sampled entries when opt.max_entries > 0).
inline GradCheckCase network_gradcheck_case(Upsampler upsampler, bool lepe = false) {
  std::string name = std::string("network_tiny_") + to_string(upsampler) + (lepe ? "_lepe" : "");
  return {name, [upsampler, lepe](GradCheckOptions o) {
            // the loss is a mean over every pixel, so many parameter gradients are
            // near 1e-6 where f64 roundoff at h = 1e-5 alone reaches 1e-4 relative
            o.abs_floor = std::max(o.abs_floor, 1e-5);
            NetworkConfig cfg = NetworkConfig::tiny();
            cfg.upsampler = upsampler;
            cfg.lepe = lepe;
            ModelParams<double> p = init_params<double>(cfg, 3);
            detail::perturb_params(p, 4);
            Rng rng(5);
            Mask labels(cfg.input_size, cfg.input_size);
            for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(cfg.num_classes));
            detail::Inputs in{detail::rand_t({cfg.input_size, cfg.input_size, 3}, rng, 0.0, 1.0)};
            p.visit([&](const std::string&, detail::D& t) { in.push_back(t); });
            return gradcheck([&](const detail::Inputs& x) {
              ModelParams<double> q = p;
              std::size_t i = 1;
              q.visit([&](const std::string&, detail::D& t) { t = x[i++]; });
              return combined_loss(forward(x[0], q, cfg), labels, LossConfig{});
            }, in, o);
          }};
}

inline std::vector<GradCheckCase> full_gradcheck_suite() {
  auto cases = primitive_gradcheck_cases();
  for (auto& c : component_gradcheck_cases()) cases.push_back(std::move(c));
  cases.push_back(network_gradcheck_case(Upsampler::carafe));
  return cases;
}

}  // namespace cswin
