#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cswin/network.hpp"

using namespace cswin;

namespace {

NetworkConfig tiny_variant(Upsampler u, std::size_t skips, bool lepe) {
  auto c = NetworkConfig::tiny();
  c.upsampler = u;
  c.skip_connections = skips;
  c.lepe = lepe;
  return c;
}

}  // namespace

TEST(Network, TinyParamCountMatchesEnumeration) {
  const auto cfg = NetworkConfig::tiny();
  auto p = init_params<float>(cfg, 1);
  EXPECT_EQ(p.count(), count_params(cfg));
  EXPECT_EQ(count_params(cfg), 852576u);
}

TEST(Network, CountMatchesEnumerationForEveryVariant) {
  for (auto u : {Upsampler::carafe, Upsampler::bilinear, Upsampler::transposed_conv})
    for (std::size_t skips = 0; skips <= 3; ++skips)
      for (bool lepe : {false, true}) {
        const auto cfg = tiny_variant(u, skips, lepe);
        auto p = init_params<float>(cfg, 2);
        EXPECT_EQ(p.count(), count_params(cfg)) << to_string(u) << " skips " << skips << " lepe " << lepe;
      }
}

TEST(Network, StandardConfigNearReferenceFigures) {
  const auto cfg = NetworkConfig::standard();
  auto p = init_params<float>(cfg, 3);
  EXPECT_EQ(p.count(), count_params(cfg));
  EXPECT_NEAR(static_cast<double>(count_params(cfg)) / kReferenceParams, 1.0, 0.2);
  EXPECT_NEAR(static_cast<double>(count_flops(cfg)) / kReferenceFlops, 1.0, 0.2);
}

TEST(Network, FlopBreakdownSumsToTotal) {
  const auto f = count_flop_breakdown(NetworkConfig::standard());
  EXPECT_EQ(f.conv + f.linear + f.attention + f.upsample, count_flops(NetworkConfig::standard()));
  EXPECT_GT(f.attention, 0u);
  EXPECT_GT(f.upsample, 0u);
}

TEST(Network, ParameterNamesAreUnique) {
  auto p = init_params<float>(NetworkConfig::tiny(), 4);
  std::set<std::string> seen;
  for (const auto& [name, t] : p.named()) EXPECT_TRUE(seen.insert(name).second) << name;
  EXPECT_TRUE(seen.count("decoder.3.up.carafe.compressor.weight"));
  EXPECT_TRUE(seen.count("head.classifier.bias"));
}

TEST(Network, ForwardShapesForEveryVariant) {
  for (auto u : {Upsampler::carafe, Upsampler::bilinear, Upsampler::transposed_conv})
    for (std::size_t skips : {0, 3})
      for (bool lepe : {false, true}) {
        const auto cfg = tiny_variant(u, skips, lepe);
        const auto p = init_params<float>(cfg, 5);
        Rng rng(6);
        const auto img = uniform_tensor<float>({64, 64, 3}, rng, 0, 1);
        const auto enc = encode(img, p, cfg);
        ASSERT_EQ(enc.skips.size(), 3u);
        EXPECT_EQ(enc.skips[0].shape(), (Shape{16, 16, 16}));
        EXPECT_EQ(enc.skips[2].shape(), (Shape{4, 4, 64}));
        EXPECT_EQ(enc.bottleneck.shape(), (Shape{2, 2, 128}));
        const auto y = forward(img, p, cfg);
        EXPECT_EQ(y.shape(), (Shape{64, 64, 4}));
        for (float v : y.data()) ASSERT_TRUE(std::isfinite(v));
        EXPECT_EQ(argmax_mask(y).size(), 64u * 64u);
      }
}

TEST(Network, SkipCountChangesOutput) {
  Rng rng(7);
  const auto img = uniform_tensor<float>({64, 64, 3}, rng, 0, 1);
  const auto a = tiny_variant(Upsampler::bilinear, 3, false), b = tiny_variant(Upsampler::bilinear, 2, false);
  const auto ya = forward(img, init_params<float>(a, 8), a), yb = forward(img, init_params<float>(b, 8), b);
  bool differs = false;
  for (std::size_t i = 0; i < ya.numel(); ++i) differs = differs || ya[i] != yb[i];
  EXPECT_TRUE(differs);
}

TEST(Network, WrongInputShapeRejected) {
  const auto cfg = NetworkConfig::tiny();
  const auto p = init_params<float>(cfg, 9);
  EXPECT_THROW(forward(Tensor<float>({32, 32, 3}), p, cfg), DimensionError);
  EXPECT_THROW(forward(Tensor<float>({64, 64, 1}), p, cfg), DimensionError);
}

TEST(Network, ConfigValidation) {
  auto c = NetworkConfig::tiny();
  c.input_size = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig::tiny();
  c.skip_connections = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig::tiny();
  c.stages[1].heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig::tiny();
  c.stages[2].sw = 3;  // 4x4 map at stage 3
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 3"), std::string::npos) << e.what();
  }
  c = NetworkConfig::tiny();
  c.stages[0].dim = 20;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(NetworkConfig::standard().validate());
}

TEST(Network, UpsamplerNamesRoundTrip) {
  for (auto u : {Upsampler::carafe, Upsampler::bilinear, Upsampler::transposed_conv})
    EXPECT_EQ(parse_upsampler(to_string(u)), u);
  EXPECT_THROW(parse_upsampler("pixelshuffle"), ConfigError);
}

TEST(Network, InitIsSeeded) {
  const auto cfg = NetworkConfig::tiny();
  auto a = init_params<float>(cfg, 10), b = init_params<float>(cfg, 10), c = init_params<float>(cfg, 11);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  EXPECT_EQ(na[0].second.vec(), nb[0].second.vec());
  EXPECT_NE(na[0].second.vec(), nc[0].second.vec());
}

TEST(Network, CSWinCheaperThanGlobalAttentionAtEveryStage) {
  const auto cfg = NetworkConfig::standard();
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::uint64_t r = cfg.stage_resolution(s), c = cfg.stage_dim(s), sw = cfg.stages[s].sw;
    if (sw < r) EXPECT_LT(cswin_attention_macs(r, r, c, sw), global_attention_macs(r, r, c)) << "stage " << s;
    else EXPECT_EQ(cswin_attention_macs(r, r, c, sw), global_attention_macs(r, r, c));
  }
}

TEST(NetworkStages, EmbedDownsampleAndFuseShapes) {
  Rng rng(12);
  const auto ew = detail::conv_weight<float>(7, 7, 3, 8, rng);
  EXPECT_EQ(token_embed(Tensor<float>({224, 224, 3}), ew, Tensor<float>({8})).shape(), (Shape{56, 56, 8}));
  EXPECT_EQ(token_embed(Tensor<float>({64, 64, 3}), ew, Tensor<float>({8})).shape(), (Shape{16, 16, 8}));
  const auto dw = detail::conv_weight<float>(3, 3, 8, 16, rng);
  EXPECT_EQ(downsample(Tensor<float>({56, 56, 8}), dw, Tensor<float>({16})).shape(), (Shape{28, 28, 16}));
  EXPECT_EQ(downsample(Tensor<float>({14, 14, 8}), dw, Tensor<float>({16})).shape(), (Shape{7, 7, 16}));
}

TEST(NetworkStages, SkipFuseSelectsABranch) {
  Rng rng(13);
  const auto up = uniform_tensor<double>({3, 3, 2}, rng), skip = uniform_tensor<double>({3, 3, 2}, rng);
  Tensor<double> first({1, 1, 4, 2}), second({1, 1, 4, 2});
  for (std::size_t c = 0; c < 2; ++c) {
    first[c * 2 + c] = 1;
    second[(2 + c) * 2 + c] = 1;
  }
  EXPECT_EQ(skip_fuse(up, skip, first, Tensor<double>({2})).vec(), up.vec());
  EXPECT_EQ(skip_fuse(up, skip, second, Tensor<double>({2})).vec(), skip.vec());
  EXPECT_THROW(skip_fuse(up, uniform_tensor<double>({2, 3, 2}, rng), first, Tensor<double>({2})), DimensionError);
}

TEST(NetworkStages, DecoderMirrorsEncoder) {
  const auto cfg = NetworkConfig::tiny();
  const auto p = init_params<float>(cfg, 14);
  Rng rng(15);
  const auto enc = encode(uniform_tensor<float>({64, 64, 3}, rng, 0, 1), p, cfg);
  const auto dec = decode(enc.bottleneck, enc.skips, p, cfg);
  EXPECT_EQ(dec.shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(head(dec, p, cfg).shape(), (Shape{64, 64, 4}));
}

TEST(NetworkStages, SingleClassHead) {
  auto cfg = NetworkConfig::tiny();
  cfg.num_classes = 1;
  const auto p = init_params<float>(cfg, 16);
  EXPECT_EQ(forward(Tensor<float>({64, 64, 3}), p, cfg).shape(), (Shape{64, 64, 1}));
}

TEST(Network, ZeroDepthStagesCountOnlyConvolutionsAndHead) {
  auto cfg = NetworkConfig::tiny();
  for (auto& s : cfg.stages) s.depth = 0;
  auto p = init_params<float>(cfg, 17);
  EXPECT_EQ(p.count(), count_params(cfg));
  for (const auto& [name, t] : p.named()) EXPECT_EQ(name.find("blocks"), std::string::npos) << name;
}

TEST(Network, ForwardIsDeterministic) {
  const auto cfg = NetworkConfig::tiny();
  const auto p = init_params<float>(cfg, 18);
  Rng rng(19);
  const auto img = uniform_tensor<float>({64, 64, 3}, rng, 0, 1);
  EXPECT_EQ(forward(img, p, cfg).vec(), forward(img, p, cfg).vec());
}

TEST(Network, ConvFlopsScaleWithArea) {
  auto a = NetworkConfig::tiny(), b = NetworkConfig::tiny();
  b.input_size = 128;
  EXPECT_EQ(count_flop_breakdown(b).conv, 4 * count_flop_breakdown(a).conv);
}
