#include <gtest/gtest.h>

#include "../common/grad_cases.hpp"
#include "../common/oracles.hpp"
#include "las/autodiff.hpp"
#include "las/kernels.hpp"

using namespace las;
using ad::Tape;
using ad::Var;

TEST(Autodiff, ProductRule) {
  Tape tape;
  Tensor xv({3}, std::vector<float>{1.5f, -2.0f, 4.0f});
  Var x = tape.constant(xv);
  Var w = tape.param("w", Tensor({3}, std::vector<float>{0.1f, 0.2f, 0.3f}));
  ad::GradStore g = tape.backward(ad::sum(ad::mul(x, w)));
  EXPECT_TRUE(g.at("w").identical(xv));
}

TEST(Autodiff, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 3}, 0.7f));
  tape.backward(ad::sum(x));
  EXPECT_TRUE(tape.grad(x).identical(Tensor::ones({2, 3})));
}

TEST(Autodiff, SeedShapeMismatch) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 3}, 0.7f));
  Var y = ad::scale(x, 2.0f);
  EXPECT_THROW(tape.backward(y, Tensor({3, 2}, 1.0f)), ShapeError);
  EXPECT_THROW(tape.backward(y), ShapeError);
  tape.backward(y, Tensor({2, 3}, 1.0f));
  EXPECT_TRUE(tape.grad(x).identical(Tensor::full({2, 3}, 2.0f)));
}

TEST(Autodiff, SquareAtThree) {
  ad::FiniteDiffReport r = ad::finite_diff_check(
      [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::mul(v[0], v[0])); }, {Tensor({1}, 3.0f)}, 1e-3, 1e-6);
  EXPECT_TRUE(r.passed);
  EXPECT_NEAR(r.worst_numeric, 6.0, 1e-6);
  EXPECT_NEAR(r.worst_analytic, 6.0, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Autodiff, SmoothL1SlopeInsideQuadraticZone) {
  Tape tape;
  Var pred = tape.leaf(Tensor({1, 1}, 2.5f));
  tape.backward(ad::disparity_loss(pred, Tensor({1, 1}, 2.0f), Tensor({1, 1}, 1.0f)));
  EXPECT_FLOAT_EQ(tape.grad(pred)[0], 0.5f);
}

TEST(Autodiff, WeightSharingYieldsOneNode) {
  Tape tape;
  Var a = tape.param("w", Tensor({2}, 1.0f));
  Var b = tape.param("w", Tensor({2}, 1.0f));
  EXPECT_EQ(a.id(), b.id());
  EXPECT_THROW(tape.param("w", Tensor({3}, 1.0f)), ShapeError);
  ad::GradStore g = tape.backward(ad::sum(ad::add(a, ad::scale(b, 2.0f))));
  EXPECT_TRUE(g.at("w").identical(Tensor::full({2}, 3.0f)));
}

TEST(Autodiff, DisconnectedParamsGetExactZeros) {
  Tape tape;
  Var used = tape.param("used", Tensor({2}, 1.0f));
  tape.param("unused", Tensor({2, 2}, 5.0f));
  ad::GradStore g = tape.backward(ad::sum(used));
  ASSERT_TRUE(g.count("unused"));
  for (float v : g.at("unused").data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(g.at("unused").shape(), (Shape{2, 2}));
}

TEST(Autodiff, NonTrainableParamsAreExcluded) {
  Tape tape;
  Var a = tape.param("a", Tensor({2}, 1.0f));
  Var b = tape.param("b", Tensor({2}, 1.0f), false);
  ad::GradStore g = tape.backward(ad::sum(ad::mul(a, b)));
  EXPECT_TRUE(g.count("a"));
  EXPECT_FALSE(g.count("b"));
}

TEST(Autodiff, RecordedOutputIsBitExact) {
  SplitMix64 rng(3);
  Tensor x = oracle::random_tensor({3, 8, 8}, rng), k = oracle::random_tensor({4, 3, 3, 3}, rng);
  Conv2dOptions o;
  o.padding = {1, 1};
  Tensor plain = activation(conv2d(x, k, nullptr, o), ActKind::Gelu);
  ad::Recording rec = ad::record([&](Tape& t) {
    Var kv = t.param("k", k);
    return ad::activation(ad::conv2d(t.leaf(x), kv, nullptr, o), ActKind::Gelu);
  });
  EXPECT_TRUE(rec.output.value().identical(plain));
}

TEST(Autodiff, NonDifferentiableKernelRejectedWhileRecording) {
  Tensor x({3, 2}, 1.0f);
  EXPECT_NO_THROW(argmax_axis(x, 0));
  {
    Tape tape;
    EXPECT_THROW(argmax_axis(x, 0), NotDifferentiableError);
  }
  EXPECT_NO_THROW(argmax_axis(x, 0));
  Tape inference(false);
  EXPECT_NO_THROW(argmax_axis(x, 0));
}

TEST(Autodiff, GradientsMatchParameterShapes) {
  Tape tape;
  Var w = tape.param("w", Tensor({2, 3, 3, 3}, 0.1f));
  Var b = tape.param("b", Tensor({2}, 0.0f));
  Conv2dOptions o;
  o.padding = {1, 1};
  ad::GradStore g = tape.backward(ad::sum(ad::conv2d(tape.constant(Tensor({3, 5, 5}, 1.0f)), w, &b, o)));
  EXPECT_EQ(g.at("w").shape(), w.shape());
  EXPECT_EQ(g.at("b").shape(), b.shape());
}

TEST(Autodiff, SoftmaxGradientSumsToZeroAlongAxis) {
  Tensor x = gradcases::rand({7, 3, 2}, 5, -3.0, 3.0);
  Tensor weights = gradcases::rand({7, 3, 2}, 6);
  Tape tape;
  Var xv = tape.leaf(x);
  tape.backward(ad::weighted_sum(ad::softmax_axis(xv, 0), weights));
  Tensor g = tape.grad(xv);
  for (int64_t s = 0; s < 6; ++s) {
    double sum = 0;
    for (int64_t d = 0; d < 7; ++d) sum += g[d * 6 + s];
    EXPECT_NEAR(sum, 0.0, 1e-6);
  }
}

TEST(Autodiff, BackwardVisitsSharedSubgraphOnce) {
  // y = (x*2) used twice; gradient must be 4, not doubled by revisiting.
  Tape tape;
  Var x = tape.leaf(Tensor({1}, 1.0f));
  Var y = ad::scale(x, 2.0f);
  tape.backward(ad::sum(ad::add(y, y)));
  EXPECT_EQ(tape.grad(x)[0], 4.0f);
}

class KernelGradient : public ::testing::TestWithParam<size_t> {};

TEST_P(KernelGradient, MatchesCentralDifferences) {
  static const std::vector<gradcases::Case> cases = gradcases::all_cases();
  const gradcases::Case& c = cases.at(GetParam());
  ad::FiniteDiffReport r = ad::finite_diff_check(c.fn, c.params, 1e-3, 1e-4);
  EXPECT_TRUE(r.passed) << c.name << ": max rel error " << r.max_rel_error << " at param " << r.worst_param << "["
                        << r.worst_index << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(AllKernels, KernelGradient, ::testing::Range<size_t>(0, gradcases::all_cases().size()),
                         [](const ::testing::TestParamInfo<size_t>& info) {
                           return gradcases::all_cases()[info.param].name;
                         });

TEST(Autodiff, FeatureAlignZeroSiteHasZeroGradient) {
  Tensor teacher = gradcases::rand({4, 2, 2}, 50), student = gradcases::rand({4, 2, 2}, 51);
  for (int64_t c = 0; c < 4; ++c) teacher[c * 4 + 1] = 0.0f;
  Tape tape;
  Var t = tape.leaf(teacher), s = tape.leaf(student);
  tape.backward(ad::feature_align_loss(t, s));
  for (int64_t c = 0; c < 4; ++c) {
    EXPECT_EQ(tape.grad(t)[c * 4 + 1], 0.0f);
    EXPECT_EQ(tape.grad(s)[c * 4 + 1], 0.0f);
  }
}
