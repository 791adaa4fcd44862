#include <gtest/gtest.h>

#include <cmath>

#include "cswin/attention.hpp"
#include "cswin/gradcheck_suite.hpp"
#include "oracles.hpp"

using namespace cswin;

namespace {

CSWinBlockParams<double> random_block(std::size_t c, bool lepe, Rng& rng) {
  auto p = CSWinBlockParams<double>::init(c, 2, lepe, rng);
  for (Tensor<double>* t : {&p.wq, &p.wk, &p.wv, &p.wo})
    for (double& v : t->data()) v = rng.uniform(-0.8, 0.8);
  if (lepe)
    for (double& v : p.lepe.data()) v = rng.uniform(-0.5, 0.5);
  return p;
}

double max_err(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Partition, StripeRangesCoverTheMap) {
  const auto p = make_partition(8, 6, StripeDirection::vertical, 2);
  EXPECT_EQ(p.count, 3u);
  EXPECT_EQ(p.length(), 16u);
  ASSERT_EQ(p.stripes.size(), 3u);
  EXPECT_EQ(p.stripes[2], (std::pair<std::size_t, std::size_t>{4, 6}));
  EXPECT_THROW(make_partition(8, 6, StripeDirection::vertical, 4), ConfigError);
  EXPECT_THROW(make_partition(8, 6, StripeDirection::horizontal, 0), ConfigError);
}

TEST(Partition, MergeInvertsPartition) {
  Rng rng(1);
  const auto x = uniform_tensor<double>({6, 4, 3}, rng);
  for (auto dir : {StripeDirection::horizontal, StripeDirection::vertical}) {
    const auto s = partition(x, dir, 2);
    const std::size_t n = dir == StripeDirection::horizontal ? 3 : 2;
    ASSERT_EQ(s.tensors.size(), n);
    if (dir == StripeDirection::horizontal) {
      EXPECT_EQ(s.tensors[1].shape(), (Shape{2, 4, 3}));
      EXPECT_EQ(s.tensors[1].at({0, 3, 2}), x.at({2, 3, 2}));
    } else {
      EXPECT_EQ(s.tensors[1].shape(), (Shape{6, 2, 3}));
      EXPECT_EQ(s.tensors[1].at({5, 0, 1}), x.at({5, 2, 1}));
    }
    EXPECT_EQ(merge_stripes(s).vec(), x.vec()) << to_string(dir);
  }
}

TEST(CSWinAttention, MatchesLoopOracle) {
  Rng rng(2);
  struct Case {
    std::size_t h, w, heads, c, sw;
  };
  for (const Case& k : {Case{4, 4, 2, 4, 1}, Case{4, 4, 2, 4, 2}, Case{6, 4, 4, 8, 2}, Case{8, 8, 2, 6, 4},
                        Case{3, 9, 2, 2, 3}, Case{2, 6, 4, 4, 1}}) {
    const auto p = random_block(k.c, false, rng);
    const auto x = uniform_tensor<double>({k.h, k.w, k.c}, rng);
    const auto got = cswin_attention(x, p, {k.heads, k.sw, k.c, false});
    EXPECT_LT(max_err(got, oracle::stripe_attention(x, p, k.heads, k.sw, false)), 1e-10)
        << k.h << "x" << k.w << " sw " << k.sw;
  }
}

TEST(CSWinAttention, LePEMatchesOracleWithinStripes) {
  Rng rng(3);
  for (std::size_t sw : {1, 2, 4}) {
    const auto p = random_block(8, true, rng);
    const auto x = uniform_tensor<double>({8, 4, 8}, rng);
    const auto got = cswin_attention(x, p, {4, sw, 8, true});
    EXPECT_LT(max_err(got, oracle::stripe_attention(x, p, 4, sw, true)), 1e-10) << "sw " << sw;
  }
}

TEST(CSWinAttention, FullStripeEqualsGlobalAttention) {
  Rng rng(4);
  const auto p = random_block(4, false, rng);
  const auto x = uniform_tensor<double>({5, 5, 4}, rng);
  const auto got = cswin_attention(x, p, {2, 5, 4, false});
  EXPECT_LT(max_err(got, oracle::stripe_attention(x, p, 2, 5, false, true)), 1e-10);
  EXPECT_LT(max_err(global_attention(x, p, 2), oracle::stripe_attention(x, p, 2, 5, false, true)), 1e-10);
}

TEST(CSWinAttention, OutputShapeMatchesInput) {
  Rng rng(5);
  const auto p = CSWinBlockParams<double>::init(8, 4, false, rng);
  const auto x = uniform_tensor<double>({4, 8, 8}, rng);
  EXPECT_EQ(cswin_attention(x, p, {2, 2, 8, false}).shape(), x.shape());
  EXPECT_EQ(cswin_block(x, p, {2, 2, 8, false}).shape(), x.shape());
}

TEST(CSWinAttention, InvalidConfigurations) {
  Rng rng(6);
  const auto p = CSWinBlockParams<double>::init(6, 2, false, rng);
  const auto x = uniform_tensor<double>({4, 4, 6}, rng);
  EXPECT_THROW(cswin_attention(x, p, {3, 1, 6, false}), ConfigError);  // odd heads
  EXPECT_THROW(cswin_attention(x, p, {2, 3, 6, false}), ConfigError);  // sw does not divide 4
  EXPECT_THROW(cswin_attention(x, p, {4, 1, 6, false}), ConfigError);  // 6 % 4 != 0
  EXPECT_THROW(cswin_attention(x, p, {2, 1, 6, true}), ConfigError);   // LePE without kernel
  const auto p8 = CSWinBlockParams<double>::init(8, 2, false, rng);
  EXPECT_THROW(cswin_attention(x, p8, {2, 1, 8, false}), DimensionError);
}

TEST(CSWinAttention, CostGrowsWithStripeWidthAndStaysBelowGlobal) {
  std::uint64_t prev = 0;
  for (std::uint64_t sw : {1, 2, 4, 8}) {
    const auto m = cswin_attention_macs(56, 56, 64, sw);
    EXPECT_GT(m, prev);
    EXPECT_LT(m, global_attention_macs(56, 56, 64));
    prev = m;
  }
  EXPECT_EQ(cswin_attention_macs(8, 8, 4, 8), global_attention_macs(8, 8, 4));
}

TEST(StripeAttention, SingleTokenReturnsItsValue) {
  Rng rng(7);
  const auto x = uniform_tensor<double>({1, 1, 4}, rng);
  const auto wq = uniform_tensor<double>({4, 2}, rng), wk = uniform_tensor<double>({4, 2}, rng),
             wv = uniform_tensor<double>({4, 2}, rng);
  const auto y = stripe_attention(x, wq, wk, wv, 2);
  const auto v = oracle::project(x, wv);
  EXPECT_NEAR(y[0], v[0], 1e-12);
  EXPECT_NEAR(y[1], v[1], 1e-12);
}

TEST(StripeAttention, ZeroQueryKeyAveragesValues) {
  Rng rng(8);
  const auto x = uniform_tensor<double>({2, 3, 4}, rng);
  const auto wv = uniform_tensor<double>({4, 2}, rng);
  const Tensor<double> zero({4, 2});
  const auto y = stripe_attention(x, zero, zero, wv, 2);
  const auto v = oracle::project(x, wv);
  for (std::size_t e = 0; e < 2; ++e) {
    double mean = 0;
    for (std::size_t t = 0; t < 6; ++t) mean += v[t * 2 + e] / 6;
    for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(y[t * 2 + e], mean, 1e-12);
  }
  EXPECT_THROW(stripe_attention(x, zero, zero, wv, 3), DimensionError);
}

TEST(StripeAttention, LengthSixMatchesDenseLoop) {
  Rng rng(9);
  const auto x = uniform_tensor<double>({2, 3, 4}, rng);
  const auto wq = uniform_tensor<double>({4, 2}, rng), wk = uniform_tensor<double>({4, 2}, rng),
             wv = uniform_tensor<double>({4, 2}, rng);
  const auto q = oracle::project(x, wq), k = oracle::project(x, wk), v = oracle::project(x, wv);
  const auto y = stripe_attention(x, wq, wk, wv, 2);
  for (std::size_t t = 0; t < 6; ++t) {
    std::vector<double> a(6);
    double z = 0;
    for (std::size_t u = 0; u < 6; ++u) z += a[u] = std::exp((q[t * 2] * k[u * 2] + q[t * 2 + 1] * k[u * 2 + 1]) / std::sqrt(2.0));
    for (std::size_t e = 0; e < 2; ++e) {
      double s = 0;
      for (std::size_t u = 0; u < 6; ++u) s += a[u] / z * v[u * 2 + e];
      EXPECT_NEAR(y[t * 2 + e], s, 1e-12);
    }
  }
}

TEST(CSWinAttention, PaperScaleStageThree) {
  Rng rng(10);
  const auto p = random_block(8, false, rng);
  const auto x = uniform_tensor<double>({14, 14, 8}, rng);
  EXPECT_LT(max_err(cswin_attention(x, p, {4, 7, 8, false}), oracle::stripe_attention(x, p, 4, 7, false)), 1e-10);
  const auto s = partition(x, StripeDirection::horizontal, 7);
  ASSERT_EQ(s.tensors.size(), 2u);
  EXPECT_EQ(s.tensors[0].shape(), (Shape{7, 14, 8}));
}

TEST(CSWinAttention, VerticalIsTransposedHorizontal) {
  Rng rng(11);
  const auto x = uniform_tensor<double>({6, 4, 4}, rng);
  const auto wq = uniform_tensor<double>({4, 4}, rng), wk = uniform_tensor<double>({4, 4}, rng),
             wv = uniform_tensor<double>({4, 4}, rng);
  const auto v = v_attention(x, wq, wk, wv, 2, 2);
  const auto h = h_attention(permute(x, {1, 0, 2}), wq, wk, wv, 2, 2);
  EXPECT_LT(max_err(v, permute(h, {1, 0, 2})), 1e-12);
}

TEST(CSWinBlock, ZeroWeightsReduceToTheResidualPath) {
  Rng rng(12);
  auto p = CSWinBlockParams<double>::init(4, 2, true, rng);
  p.visit("", [](const std::string&, Tensor<double>& t) {
    for (double& v : t.data()) v = 0;
  });
  const auto x = uniform_tensor<double>({4, 4, 4}, rng);
  EXPECT_EQ(cswin_block(x, p, {2, 2, 4, true}).vec(), x.vec());
}

class ComponentGradcheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ComponentGradcheck, CentralDifferencesAgree) {
  const auto cases = component_gradcheck_cases();
  const auto& c = cases.at(GetParam());
  const GradCheckResult r = c.run(GradCheckOptions{});
  EXPECT_TRUE(r.ok) << c.name << ": " << r.worst << " rel err " << r.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(Blocks, ComponentGradcheck,
                         ::testing::Range<std::size_t>(0, component_gradcheck_cases().size()),
                         [](const auto& info) { return component_gradcheck_cases()[info.param].name; });
