#include <gtest/gtest.h>

#include <algorithm>

#include "../common/oracles.hpp"
#include "las/macs.hpp"
#include "las/network.hpp"
#include "las/stereo_kernels.hpp"

using namespace las;

namespace {

const std::vector<AggVariant> kVariants = {AggVariant::TwoDOnly, AggVariant::Bilateral, AggVariant::TwoDThenThreeD,
                                           AggVariant::ThreeDThenTwoD, AggVariant::Interleaved};

NetworkConfig micro_with(AggVariant v) {
  NetworkConfig c = NetworkConfig::micro();
  c.agg_variant = v;
  return c;
}

Tensor image(uint64_t seed, int64_t h = 64, int64_t w = 128) {
  SplitMix64 rng(seed);
  return oracle::random_tensor({3, h, w}, rng, 0.0, 1.0);
}

WeightStore zero_weights(const WeightStore& w) {
  WeightStore z = w;
  for (const auto& [name, e] : w.entries())
    if (e.init != InitScheme::Ones) z.mutable_at(name).fill(0.0f);
  return z;
}

}  // namespace

// ------------------------------------------------------------- config

TEST(NetworkConfig, Validation) {
  NetworkConfig c = NetworkConfig::micro();
  EXPECT_NO_THROW(c.validate());
  c.d_max = 62;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig::micro();
  c.three_d_proportion = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.three_d_proportion = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(agg_variant_from_string("three-d-only"), ConfigError);
  for (AggVariant v : kVariants) EXPECT_EQ(agg_variant_from_string(to_string(v)), v);
  EXPECT_EQ(NetworkConfig::micro().levels(), 16);
  EXPECT_EQ(NetworkConfig::paper_like().levels(), 48);
}

TEST(NetworkConfig, ThreeDProportionNearTarget) {
  NetworkConfig c = NetworkConfig::micro();
  const AggregationMacs m = aggregation_macs(c, 16, 32);
  EXPECT_GT(m.three_d_fraction(), 0.03);
  EXPECT_LT(m.three_d_fraction(), 0.07);
  c.three_d_proportion = 0.2;
  EXPECT_GT(aggregation_macs(c, 16, 32).three_d_fraction(), 0.15);
}

// ------------------------------------------------------------- weights

TEST(WeightStore, DeterministicInitialization) {
  WeightStore a = WeightStore::initialize(NetworkConfig::micro(), 5);
  WeightStore b = WeightStore::initialize(NetworkConfig::micro(), 5);
  WeightStore c = WeightStore::initialize(NetworkConfig::micro(), 6);
  EXPECT_TRUE(a.identical(b));
  EXPECT_FALSE(a.identical(c));
  EXPECT_TRUE(a.same_structure(c));
  EXPECT_EQ(a.init_seed(), 5u);
}

TEST(WeightStore, RunningStatisticsAreNotTrainable) {
  WeightStore w = WeightStore::initialize(NetworkConfig::micro(), 1);
  EXPECT_FALSE(w.entry("backbone.stem.bn.running_var").trainable);
  EXPECT_TRUE(w.entry("backbone.stem.bn.scale").trainable);
  EXPECT_LT(w.parameter_count(true), w.parameter_count(false));
}

TEST(WeightStore, ValidateAgainstConfig) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 1);
  EXPECT_NO_THROW(w.validate_against(c));
  NetworkConfig wider = c;
  wider.fused_channels = 32;
  EXPECT_THROW(w.validate_against(wider), ShapeError);
  EXPECT_THROW(w.validate_against(micro_with(AggVariant::Interleaved)), ShapeError);
}

TEST(WeightStore, EveryGraphParameterExists) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 1);
  ad::Tape tape(false);
  ParamSource ps(tape, w);
  EXPECT_NO_THROW(graph::forward(ps, tape.constant(image(1, 32, 64)), tape.constant(image(2, 32, 64)), c));
  WeightStore missing;
  ParamSource empty(tape, missing);
  EXPECT_THROW(graph::forward(empty, tape.constant(image(1, 32, 64)), tape.constant(image(2, 32, 64)), c), Error);
}

// ------------------------------------------------------------- features

TEST(ExtractFeatures, ShapeAndDeterminism) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 2);
  Tensor img = image(3);
  Tensor f1 = extract_features(img, w, c), f2 = extract_features(img, w, c);
  EXPECT_EQ(f1.shape(), (Shape{48, 16, 32}));
  EXPECT_TRUE(f1.identical(f2));
}

TEST(ExtractFeatures, ZeroWeightsGiveZeroFeatures) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = zero_weights(WeightStore::initialize(c, 2));
  Tensor f = extract_features(image(4), w, c);
  for (float v : f.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ExtractFeatures, RejectsIndivisibleInput) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 2);
  EXPECT_THROW(extract_features(Tensor({3, 48, 64}, 0.5f), w, c), ShapeError);
  EXPECT_THROW(extract_features(Tensor({1, 64, 64}, 0.5f), w, c), ShapeError);
}

TEST(ExtractFeatures, LeftAndRightShareWeights) {
  // Perturbing one backbone tensor moves both branches, and the gradient of a
  // loss on both branches lands on the single shared tensor.
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 3);
  Tensor left = image(5, 32, 64), right = image(6, 32, 64);
  ad::Tape tape;
  ParamSource ps(tape, w);
  GraphOutput g = graph::forward(ps, tape.constant(left), tape.constant(right), c);
  EXPECT_EQ(tape.op(tape.param("backbone.stem.conv.weight")), "param");

  WeightStore moved = w;
  moved.mutable_at("backbone.s1.b0.dw.conv.weight")[0] += 0.5f;
  Tensor fl0 = extract_features(left, w, c), fr0 = extract_features(right, w, c);
  Tensor fl1 = extract_features(left, moved, c), fr1 = extract_features(right, moved, c);
  EXPECT_FALSE(fl0.identical(fl1));
  EXPECT_FALSE(fr0.identical(fr1));
  // Feeding the right image to the "left" branch reproduces the right features.
  ad::Tape t2(false);
  ParamSource p2(t2, moved);
  GraphOutput swapped = graph::forward(p2, t2.constant(right), t2.constant(left), c);
  EXPECT_TRUE(swapped.left_features.value().identical(fr1));
}

// ------------------------------------------------------------- cost volume

TEST(CostVolume, OnesGiveOne) {
  CostVolume cv = build_cost_volume(Tensor({8, 4, 6}, 1.0f), Tensor({8, 4, 6}, 1.0f), 4);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 6; ++x) EXPECT_EQ(cv.values.at({0, y, x}), 1.0f);
}

TEST(CostVolume, OutOfRangeIsZero) {
  SplitMix64 rng(1);
  Tensor l = oracle::random_tensor({4, 3, 5}, rng), r = oracle::random_tensor({4, 3, 5}, rng);
  CostVolume cv = build_cost_volume(l, r, 8);
  for (int64_t d = 0; d < 8; ++d)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 5; ++x)
        if (x - d < 0) EXPECT_EQ(cv.values.at({d, y, x}), 0.0f);
}

TEST(CostVolume, ShiftedCopyPeaksAtShift) {
  SplitMix64 rng(2);
  const int64_t k = 3;
  Tensor l = oracle::random_tensor({16, 16, 16}, rng);
  Tensor r = oracle::random_tensor({16, 16, 16}, rng);
  for (int64_t c = 0; c < 16; ++c)
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x + k < 16; ++x) r.at({c, y, x}) = l.at({c, y, x + k});
  CostVolume cv = build_cost_volume(l, r, 8);
  Tensor ref = oracle::correlation(l, r, 8);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 8; x < 16; ++x) {
      int64_t best = 0, best_ref = 0;
      for (int64_t d = 1; d < 8; ++d) {
        if (cv.values.at({d, y, x}) > cv.values.at({best, y, x})) best = d;
        if (ref.at({d, y, x}) > ref.at({best_ref, y, x})) best_ref = d;
      }
      EXPECT_EQ(best, k);
      EXPECT_EQ(best_ref, k);
    }
}

TEST(CostVolume, MatchesTripleLoop) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor l = oracle::random_tensor({8, 12, 12}, rng), r = oracle::random_tensor({8, 12, 12}, rng);
    EXPECT_LE(oracle::max_abs_diff(build_cost_volume(l, r, 6).values, oracle::correlation(l, r, 6)), 1e-5);
  }
}

TEST(CostVolume, ShapeMismatch) {
  EXPECT_THROW(build_cost_volume(Tensor({8, 4, 6}), Tensor({8, 4, 5}), 4), ShapeError);
}

// ------------------------------------------------------------- aggregation

TEST(Aggregate, OutputShapeForAllVariants) {
  for (AggVariant v : kVariants) {
    const NetworkConfig c = micro_with(v);
    WeightStore w = WeightStore::initialize(c, 4);
    SplitMix64 rng(4);
    CostVolume cv{oracle::random_tensor({16, 16, 32}, rng)};
    EXPECT_EQ(aggregate(cv, w, c).values.shape(), (Shape{16, 16, 32})) << to_string(v);
  }
}

TEST(Aggregate, ZeroWeightsGiveBiasDeterminedConstant) {
  for (AggVariant v : kVariants) {
    const NetworkConfig c = micro_with(v);
    WeightStore w = zero_weights(WeightStore::initialize(c, 4));
    // Non-zero output biases, everything else zero.
    for (const auto& [name, e] : w.entries())
      if (name.find("proj_out.bias") != std::string::npos || name.find(".out.bias") != std::string::npos)
        w.mutable_at(name).fill(0.25f);
    SplitMix64 rng(5);
    CostVolume a{oracle::random_tensor({16, 16, 32}, rng)}, b{oracle::random_tensor({16, 16, 32}, rng)};
    Tensor ya = aggregate(a, w, c).values, yb = aggregate(b, w, c).values;
    EXPECT_TRUE(ya.identical(yb)) << to_string(v);
    const float first = ya[0];
    for (float x : ya.data()) EXPECT_EQ(x, first) << to_string(v);
  }
}

TEST(Aggregate, WrongLevelCount) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 4);
  EXPECT_THROW(aggregate(CostVolume{Tensor({12, 16, 32})}, w, c), ShapeError);
}

TEST(Aggregate, SequentialOrdersHaveEqualMacsAndParameters) {
  const NetworkConfig a = micro_with(AggVariant::TwoDThenThreeD), b = micro_with(AggVariant::ThreeDThenTwoD);
  WeightStore wa = WeightStore::initialize(a, 1), wb = WeightStore::initialize(b, 1);
  EXPECT_EQ(wa.parameter_count(), wb.parameter_count());
  EXPECT_TRUE(wa.same_structure(wb));
  SplitMix64 rng(6);
  CostVolume cv{oracle::random_tensor({16, 16, 32}, rng)};
  MacsLedger la, lb;
  {
    MacsScope s(la);
    aggregate(cv, wa, a);
  }
  {
    MacsScope s(lb);
    aggregate(cv, wb, b);
  }
  EXPECT_EQ(la.total(), lb.total());
  EXPECT_EQ(la.total(), aggregation_macs(a, 16, 32).total());
}

TEST(Aggregate, LedgerMatchesClosedFormForAllVariants) {
  for (AggVariant v : kVariants) {
    const NetworkConfig c = micro_with(v);
    WeightStore w = WeightStore::initialize(c, 1);
    MacsLedger ledger;
    {
      MacsScope s(ledger, true);
      aggregate(CostVolume{Tensor({16, 16, 32})}, w, c);
    }
    const AggregationMacs m = aggregation_macs(c, 16, 32);
    EXPECT_EQ(ledger.total_with_prefix("aggregation/g2d"), m.two_d) << to_string(v);
    EXPECT_EQ(ledger.total_with_prefix("aggregation/g3d"), m.three_d) << to_string(v);
  }
}

TEST(Aggregate, InterleavedWithinTenPercentOfDefault) {
  const int64_t a = aggregation_macs(micro_with(AggVariant::Interleaved), 16, 32).total();
  const int64_t b = aggregation_macs(micro_with(AggVariant::ThreeDThenTwoD), 16, 32).total();
  EXPECT_LE(std::abs(static_cast<double>(a - b)) / static_cast<double>(b), 0.10);
}

// ------------------------------------------------------------- soft-argmax

TEST(SoftArgmax, OneHot) {
  Tensor c({16, 1, 1}, 0.0f);
  c[5] = 100.0f;
  EXPECT_NEAR(soft_argmax(CostVolume{c})[0], 5.0, 1e-3);
}

TEST(SoftArgmax, UniformIsMean) {
  EXPECT_NEAR(soft_argmax(CostVolume{Tensor({48, 2, 2}, 0.7f)})[0], 23.5, 1e-4);
}

TEST(SoftArgmax, MatchesDirectEvaluation) {
  SplitMix64 rng(7);
  Tensor c = oracle::random_tensor({8, 1, 1}, rng, -3, 3);
  double z = 0, num = 0;
  for (int d = 0; d < 8; ++d) z += std::exp(static_cast<double>(c[d]));
  for (int d = 0; d < 8; ++d) num += d * std::exp(static_cast<double>(c[d])) / z;
  EXPECT_NEAR(soft_argmax(CostVolume{c})[0], num, 1e-5);
}

TEST(SoftArgmax, TranslationInvariantAndInRange) {
  SplitMix64 rng(8);
  Tensor c = oracle::random_tensor({10, 4, 5}, rng, -4, 4);
  Tensor shifted = c;
  for (int64_t s = 0; s < 20; ++s) {
    const float k = static_cast<float>(rng.uniform(-10, 10));
    for (int64_t d = 0; d < 10; ++d) shifted[d * 20 + s] += k;
  }
  Tensor a = soft_argmax(CostVolume{c}), b = soft_argmax(CostVolume{shifted});
  EXPECT_LE(oracle::max_abs_diff(a, b), 1e-5);
  for (float v : a.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 9.0f);
  }
}

// ------------------------------------------------------------- convex upsample

TEST(ConvexUpsample, ConstantMap) {
  SplitMix64 rng(9);
  Tensor mask = oracle::random_tensor({144, 3, 4}, rng, -5, 5);
  Tensor y = convex_upsample(Tensor({3, 4}, 2.5f), mask);
  EXPECT_EQ(y.shape(), (Shape{12, 16}));
  for (float v : y.data()) EXPECT_EQ(v, 10.0f);
}

TEST(ConvexUpsample, StaysInsideNeighbourhoodHull) {
  SplitMix64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor d = oracle::random_tensor({5, 6}, rng, 0, 12);
    if (trial % 2 == 0)
      for (int64_t y = 0; y < 5; ++y)
        for (int64_t x = 0; x < 6; ++x) d.at({y, x}) = x < 3 ? 1.0f : 9.0f;  // step edge
    Tensor mask = oracle::random_tensor({144, 5, 6}, rng, -8, 8);
    Tensor up = convex_upsample(d, mask);
    for (int64_t y = 0; y < 5; ++y)
      for (int64_t x = 0; x < 6; ++x) {
        float lo = 1e30f, hi = -1e30f;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const float v = d.at({std::clamp<int64_t>(y + dy, 0, 4), std::clamp<int64_t>(x + dx, 0, 5)});
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        for (int64_t i = 0; i < 4; ++i)
          for (int64_t j = 0; j < 4; ++j) {
            const float v = up.at({4 * y + i, 4 * x + j});
            EXPECT_GE(v, 4.0f * lo);
            EXPECT_LE(v, 4.0f * hi);
          }
      }
  }
}

TEST(ConvexUpsample, ShapeMismatch) {
  EXPECT_THROW(convex_upsample(Tensor({3, 4}), Tensor({143, 3, 4})), ShapeError);
  EXPECT_THROW(convex_upsample(Tensor({3, 4}), Tensor({144, 3, 5})), ShapeError);
}

// ------------------------------------------------------------- forward

TEST(Forward, RangeShapeAndDeterminism) {
  for (AggVariant v : kVariants) {
    const NetworkConfig c = micro_with(v);
    WeightStore w = WeightStore::initialize(c, 11);
    Tensor l = image(12), r = image(13);
    ForwardResult a = forward(l, r, w, c, true), b = forward(l, r, w, c);
    EXPECT_EQ(a.disparity.values.shape(), (Shape{64, 128}));
    EXPECT_TRUE(a.disparity.values.identical(b.disparity.values));
    ASSERT_TRUE(a.left_features.has_value());
    EXPECT_FALSE(b.left_features.has_value());
    EXPECT_EQ(a.left_features->shape(), (Shape{48, 16, 32}));
    for (float d : a.disparity.values.data()) {
      EXPECT_GE(d, 0.0f);
      EXPECT_LE(d, static_cast<float>(c.d_max));
    }
  }
}

TEST(Forward, MismatchedPair) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 11);
  EXPECT_THROW(forward(image(1), image(2, 64, 96), w, c), ShapeError);
}

TEST(Forward, GradientsForEveryNamedParameter) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 12);
  ad::Tape tape;
  ParamSource ps(tape, w);
  GraphOutput g = graph::forward(ps, tape.constant(image(1, 32, 64)), tape.constant(image(2, 32, 64)), c);
  Tensor gt({32, 64}, 5.0f), mask({32, 64}, 1.0f);
  ad::GradStore grads = tape.backward(ad::disparity_loss(g.disparity, gt, mask));
  int64_t trainable = 0;
  for (const auto& [name, e] : w.entries()) {
    if (!e.trainable) {
      EXPECT_FALSE(grads.count(name));
      continue;
    }
    ++trainable;
    ASSERT_TRUE(grads.count(name)) << name;
    EXPECT_EQ(grads.at(name).shape(), e.value.shape()) << name;
  }
  EXPECT_EQ(static_cast<int64_t>(grads.size()), trainable);
}

TEST(Forward, RecordedMatchesUnrecorded) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 13);
  Tensor l = image(3, 32, 64), r = image(4, 32, 64);
  ad::Tape tape;
  ParamSource ps(tape, w);
  GraphOutput g = graph::forward(ps, tape.constant(l), tape.constant(r), c);
  EXPECT_TRUE(g.disparity.value().identical(forward(l, r, w, c).disparity.values));
}

TEST(Forward, WholeNetworkGradientMatchesCentralDifferences) {
  const NetworkConfig c = NetworkConfig::micro();
  WeightStore w = WeightStore::initialize(c, 14);
  std::vector<std::string> names;
  std::vector<Tensor> params;
  for (const auto& [name, e] : w.entries())
    if (e.trainable) {
      names.push_back(name);
      params.push_back(e.value);
    }
  const Tensor left = image(7, 32, 64), right = image(8, 32, 64);
  SplitMix64 rng(9);
  const Tensor gt = oracle::random_tensor({32, 64}, rng, 0.0, 20.0);
  const Tensor mask({32, 64}, 1.0f);
  ad::ScalarFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    std::map<std::string, ad::Var> bound;
    for (size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], v[i]);
    for (const auto& [name, e] : w.entries())
      if (!e.trainable) bound.emplace(name, t.constant(e.value));
    ParamSource ps(t, bound);
    GraphOutput g = graph::forward(ps, t.constant(left), t.constant(right), c);
    return ad::disparity_loss(g.disparity, gt, mask);
  };
  ad::FiniteDiffReport r = ad::finite_diff_check(fn, params, 1e-3, 1e-2, 240, 15);
  EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error << " at " << names[r.worst_param] << "["
                        << r.worst_index << "]";
  EXPECT_GE(r.checked, 200);
  RecordProperty("max_rel_error", std::to_string(r.max_rel_error));
}
