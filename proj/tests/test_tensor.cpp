#include <gtest/gtest.h>

#include "cswin/ops.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

using namespace cswin;

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.size(1), 3u);
  for (float v : t.data()) EXPECT_EQ(v, 1.5f);
  EXPECT_EQ(to_string(t.shape()), "(2,3,4)");
}

TEST(Tensor, ValueCountMismatchThrows) {
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, AtIndexesRowMajor) {
  Tensor<double> t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
  EXPECT_THROW(t.at({0}), DimensionError);
}

TEST(Tensor, HandlesShareStorageCloneDoesNot) {
  Tensor<float> a({3}, 1.0f);
  Tensor<float> b = a;
  Tensor<float> c = a.clone();
  b[0] = 7.0f;
  EXPECT_EQ(a[0], 7.0f);
  EXPECT_EQ(c[0], 1.0f);
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor<double>({2}).item(), ContractError);
}

TEST(Tape, NoTapeMeansNoRecording) {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad();
  Tensor<double> y = add(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, UntrackedInputsAreNotRecorded) {
  Tape<double> tape;
  auto scope = tape.record();
  Tensor<double> x({2}, 1.0);
  Tensor<double> y = add(x, x);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, GradientOfSharedSubexpressionAccumulates) {
  // f = sum(x * x + x) -> df/dx = 2x + 1
  Tape<double> tape;
  Tensor<double> x({3}, std::vector<double>{1, -2, 0.5});
  x.set_requires_grad();
  Tensor<double> loss;
  {
    auto scope = tape.record();
    loss = sum(add(mul(x, x), x));
  }
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Tape, BackwardTwiceIsAContractError) {
  Tape<double> tape;
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad();
  Tensor<double> loss;
  {
    auto scope = tape.record();
    loss = sum(x);
  }
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
  tape.reset();
  {
    auto scope = tape.record();
    loss = sum(x);
  }
  EXPECT_NO_THROW(tape.backward(loss));
}

TEST(Tape, NonScalarLossRejected) {
  Tape<double> tape;
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad();
  Tensor<double> y;
  {
    auto scope = tape.record();
    y = scale(x, 2.0);
  }
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Tape, NonFiniteLossNamesTheOp) {
  Tape<double> tape;
  Tensor<double> x({2}, std::vector<double>{1e308, 1e308});
  x.set_requires_grad();
  Tensor<double> loss;
  {
    auto scope = tape.record();
    loss = sum(mul(x, x));
  }
  try {
    tape.backward(loss);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos) << e.what();
  }
}

TEST(Tape, ScopesNest) {
  Tape<double> outer, inner;
  {
    auto a = outer.record();
    EXPECT_EQ(Tape<double>::active(), &outer);
    {
      auto b = inner.record();
      EXPECT_EQ(Tape<double>::active(), &inner);
    }
    EXPECT_EQ(Tape<double>::active(), &outer);
  }
  EXPECT_EQ(Tape<double>::active(), nullptr);
}

TEST(Rng, SeededStreamsRepeatAndStateRestores) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next(), b.next());
  const std::string s = a.state();
  const double u = a.uniform();
  Rng c;
  c.set_state(s);
  EXPECT_EQ(c.uniform(), u);
}

TEST(Rng, TruncatedNormalStaysWithinTwoStd) {
  Rng r(1);
  for (int i = 0; i < 2000; ++i) EXPECT_LE(std::abs(r.truncated_normal(0.02)), 0.04 + 1e-15);
}

TEST(Rng, BelowCoversRange) {
  Rng r(3);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[r.below(5)];
  for (int h : hits) EXPECT_GT(h, 800);
}
