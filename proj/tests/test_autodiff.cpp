#include <gtest/gtest.h>

#include <cmath>

#include "seqvcr/autodiff.hpp"
#include "test_support.hpp"

namespace seqvcr {
namespace {

using ad::Tape;
using ad::Var;
using testing::expect_gradients_match;
using testing::random_tensor;
using testing::weighted_sum;

TEST(Tensor, ShapeAndReshape) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(shape_string(t.shape()), "[2x3]");
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.dim(0), 3u);
  EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{2, 0}), std::invalid_argument);
}

TEST(Tensor, GradBufferFollowsFlag) {
  Tensor t(Shape{4});
  EXPECT_FALSE(t.has_grad());
  t.set_requires_grad(true);
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 4u);
  t.set_requires_grad(false);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, FiniteCheck) {
  Tensor t(Shape{3}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

// Values computed to 25 digits with arbitrary precision arithmetic.
TEST(Autodiff, SoftmaxMatchesHighPrecisionValues) {
  Tape tape;
  const Var x = tape.input(Tensor(Shape{1, 3}, std::vector<double>{1, 2, 3}));
  const Tensor& y = tape.value(ad::softmax(tape, x, 1));
  EXPECT_NEAR(y[0], 0.0900305731703804579980221, 1e-15);
  EXPECT_NEAR(y[1], 0.2447284710547976524729596, 1e-15);
  EXPECT_NEAR(y[2], 0.6652409557748218895290183, 1e-15);
}

TEST(Autodiff, SoftmaxIsShiftInvariantAndStableForLargeInputs) {
  Tape tape;
  const Var x = tape.input(Tensor(Shape{1, 3}, std::vector<double>{1001, 1002, 1003}));
  const Tensor& y = tape.value(ad::softmax(tape, x, 1));
  EXPECT_NEAR(y[0], 0.0900305731703804579980221, 1e-15);
  EXPECT_TRUE(y.all_finite());
}

// Uniform logits over V classes give a loss of exactly ln V.
TEST(Autodiff, CrossEntropyOfUniformLogitsIsLogVocab) {
  Tape tape;
  const Var logits = tape.input(Tensor(Shape{3, 10}, 0.25));
  const std::vector<std::int32_t> targets{0, 4, 9};
  const std::vector<unsigned char> mask{1, 1, 1};
  EXPECT_NEAR(tape.value(ad::cross_entropy(tape, logits, targets, mask)).item(), 2.302585092994045684017991, 1e-14);
}

// CE = logsumexp(z) − z_target, expanded by hand.
TEST(Autodiff, CrossEntropyHandExpansion) {
  Tape tape;
  const Var logits = tape.input(Tensor::from_rows({{0.5, -1.0, 2.0}, {3.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}));
  const std::vector<std::int32_t> targets{2, 1, 0};
  const std::vector<unsigned char> mask{1, 1, 0};
  const double row0 = std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(2.0)) - 2.0;
  const double row1 = std::log(std::exp(3.0) + 2.0) - 0.0;
  EXPECT_NEAR(tape.value(ad::cross_entropy(tape, logits, targets, mask)).item(), (row0 + row1) / 2, 1e-14);
}

TEST(Autodiff, CrossEntropyRejectsBadTargets) {
  Tape tape;
  const Var logits = tape.input(Tensor(Shape{2, 3}));
  const std::vector<std::int32_t> targets{0, 3};
  const std::vector<unsigned char> mask{1, 1};
  EXPECT_THROW(ad::cross_entropy(tape, logits, targets, mask), std::out_of_range);
}

TEST(Autodiff, MatmulGradient) {
  Rng rng(1);
  expect_gradients_match([](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::matmul(t, v[0], v[1])); },
                         {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
}

TEST(Autodiff, LinearGradient) {
  Rng rng(2);
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::linear(t, v[0], v[1], v[2])); },
      {random_tensor({5, 3}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)});
}

TEST(Autodiff, ElementwiseGradients) {
  Rng rng(3);
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) {
        const Var a = ad::add(t, v[0], v[1]);
        return weighted_sum(t, ad::scale(t, ad::mul(t, a, v[1]), -0.7));
      },
      {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
}

TEST(Autodiff, LayerNormGradient) {
  Rng rng(4);
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::layer_norm(t, v[0], v[1], v[2])); },
      {random_tensor({4, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
}

TEST(Autodiff, GeluGradient) {
  Rng rng(5);
  expect_gradients_match([](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::gelu(t, v[0])); },
                         {random_tensor({3, 5}, rng, 2.0)});
}

TEST(Autodiff, SoftmaxGradientOnEveryAxis) {
  Rng rng(6);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    expect_gradients_match(
        [axis](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::softmax(t, v[0], axis)); },
        {random_tensor({2, 3, 4}, rng)});
  }
}

TEST(Autodiff, AttentionGradient) {
  Rng rng(7);
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::causal_self_attention(t, v[0], 2, 3, 2)); },
      {random_tensor({6, 12}, rng)});
}

TEST(Autodiff, EmbeddingGradientAccumulatesRepeatedIds) {
  Rng rng(8);
  const std::vector<std::int32_t> ids{1, 3, 1, 0};
  expect_gradients_match([&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::embedding(t, v[0], ids)); },
                         {random_tensor({4, 3}, rng)});
}

TEST(Autodiff, CrossEntropyGradient) {
  Rng rng(9);
  const std::vector<std::int32_t> targets{1, 0, 4, 2};
  const std::vector<unsigned char> mask{1, 0, 1, 1};
  expect_gradients_match(
      [&](Tape& t, const std::vector<Var>& v) { return ad::cross_entropy(t, v[0], targets, mask); },
      {random_tensor({4, 5}, rng)});
}

TEST(Autodiff, ReshapeAndSumGradient) {
  Rng rng(10);
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::reshape(t, v[0], {3, 4})); },
      {random_tensor({2, 6}, rng)});
}

TEST(Autodiff, DropoutIsSeededAndUnbiasedScaling) {
  Tape a, b;
  const Var xa = a.input(Tensor(Shape{1000}, 1.0));
  const Var xb = b.input(Tensor(Shape{1000}, 1.0));
  const Tensor& ya = a.value(ad::dropout(a, xa, 0.25, 17));
  const Tensor& yb = b.value(ad::dropout(b, xb, 0.25, 17));
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    EXPECT_EQ(ya[i], yb[i]);
    if (ya[i] == 0.0) ++zeros;
    else EXPECT_DOUBLE_EQ(ya[i], 1.0 / 0.75);
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
}

TEST(Autodiff, DropoutGradientUsesSameMask) {
  Rng rng(11);
  expect_gradients_match([](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::dropout(t, v[0], 0.5, 3)); },
                         {random_tensor({4, 4}, rng)});
}

TEST(Autodiff, GradientsReachParameterTensors) {
  Tensor w = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  w.set_requires_grad(true);
  Tape tape;
  const Var x = tape.constant(Tensor::from_rows({{1.0, -1.0}}));
  const Var y = ad::sum(tape, ad::matmul(tape, x, tape.leaf(w)));
  tape.backward(y);
  // d/dW sum(x·W) = xᵀ·1
  EXPECT_DOUBLE_EQ(w.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 1.0);
  EXPECT_DOUBLE_EQ(w.grad()[2], -1.0);
  EXPECT_DOUBLE_EQ(w.grad()[3], -1.0);
}

TEST(Autodiff, FrozenLeafReceivesNoGradient) {
  Tensor w(Shape{2, 2}, 1.0);
  Tape tape;
  const Tensor& frozen = w;
  const Var x = tape.input(Tensor(Shape{1, 2}, 1.0));
  const Var y = ad::sum(tape, ad::matmul(tape, x, tape.leaf(frozen)));
  tape.backward(y);
  EXPECT_FALSE(w.has_grad());
  EXPECT_EQ(tape.grad(x).size(), 2u);
}

TEST(Autodiff, BackwardRules) {
  Tape tape;
  const Var x = tape.input(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
  const Var s = ad::sum(tape, x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), std::logic_error);

  Tape inference(false);
  const Var y = ad::sum(inference, inference.input(Tensor(Shape{2}, 1.0)));
  EXPECT_THROW(inference.backward(y), std::logic_error);
}

TEST(Autodiff, ShapeMismatchNamesBothShapes) {
  Tape tape;
  const Var a = tape.input(Tensor(Shape{2, 3}));
  const Var b = tape.input(Tensor(Shape{2, 3}));
  try {
    ad::matmul(tape, a, b);
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] and [2x3]"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace seqvcr
