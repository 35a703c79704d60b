#include <gtest/gtest.h>

#include <cmath>

#include "../common/oracles.hpp"
#include "las/losses.hpp"
#include "las/training.hpp"

using namespace las;

namespace {

NetworkConfig small_net() { return NetworkConfig::micro(); }

Dataset tiny_dataset(uint64_t seed, int64_t count = 4) {
  SceneSpec spec;
  spec.count = count;
  spec.height = 32;
  spec.width = 64;
  spec.disparity_min = 2;
  spec.disparity_max = 20;
  spec.object_count = 1;
  spec.seed = seed;
  return gen_synthetic_dataset(spec);
}

StageConfig quick(Stage stage, int64_t steps) {
  StageConfig c;
  c.stage = stage;
  c.steps = steps;
  c.batch_size = 2;
  c.seed = 5;
  if (stage == Stage::Two) c.teacher_update = TeacherUpdate::Fixed;
  return c;
}

double dataset_loss(const WeightStore& w, const NetworkConfig& net, const Dataset& data) {
  double total = 0.0;
  for (const StereoSample& s : data)
    total += disparity_loss(forward(s.left, s.right, w, net).disparity.values, s.gt, s.valid);
  return total / static_cast<double>(data.size());
}

}  // namespace

// ------------------------------------------------------------------ losses

TEST(DisparityLoss, Examples) {
  Tensor gt({3, 4}, 10.0f), mask({3, 4}, 1.0f);
  EXPECT_EQ(disparity_loss(gt, gt, mask), 0.0);
  EXPECT_DOUBLE_EQ(disparity_loss(Tensor({3, 4}, 10.5f), gt, mask), 0.125);
  EXPECT_DOUBLE_EQ(disparity_loss(Tensor({3, 4}, 12.0f), gt, mask), 1.5);
  EXPECT_THROW(disparity_loss(gt, gt, Tensor({3, 4}, 0.0f)), ShapeError);
}

TEST(DisparityLoss, MaskedPixelsIgnored) {
  Tensor gt({1, 2}, 1.0f), mask({1, 2}, std::vector<float>{1.0f, 0.0f});
  Tensor pred({1, 2}, std::vector<float>{1.5f, 500.0f});
  EXPECT_DOUBLE_EQ(disparity_loss(pred, gt, mask), 0.125);
  EXPECT_EQ(disparity_loss_backward(pred, gt, mask)[1], 0.0f);
}

TEST(DisparityLoss, SlopeBoundedByOne) {
  SplitMix64 rng(1);
  const Tensor gt = oracle::random_tensor({6, 9}, rng, 0, 30), pred = oracle::random_tensor({6, 9}, rng, -10, 40);
  const Tensor mask({6, 9}, 1.0f);
  const Tensor g = disparity_loss_backward(pred, gt, mask);
  for (int64_t i = 0; i < g.numel(); ++i) {
    const double scaled = g[i] * 54.0;
    EXPECT_LE(std::abs(scaled), 1.0 + 1e-6);
    // Central difference of the per-pixel term.
    const double e = 1e-3, x = static_cast<double>(pred[i]) - gt[i];
    auto term = [](double v) { return std::abs(v) < 1 ? 0.5 * v * v : std::abs(v) - 0.5; };
    EXPECT_NEAR(scaled, (term(x + e) - term(x - e)) / (2 * e), 2e-3);
  }
}

TEST(FeatureAlignLoss, ParallelOrthogonalAntiParallel) {
  SplitMix64 rng(2);
  Tensor f = oracle::random_tensor({8, 3, 5}, rng);
  Tensor neg = f;
  for (float& v : neg.data()) v = -v;
  EXPECT_NEAR(feature_align_loss(f, f), 0.0, 1e-6);
  EXPECT_NEAR(feature_align_loss(f, neg), 2.0, 1e-6);
  Tensor a({2, 3, 5}, 0.0f), b({2, 3, 5}, 0.0f);
  for (int64_t i = 0; i < 15; ++i) {
    a[i] = 1.0f + static_cast<float>(i);
    b[15 + i] = 0.5f;
  }
  EXPECT_NEAR(feature_align_loss(a, b), 1.0, 1e-6);
  EXPECT_THROW(feature_align_loss(a, f), ShapeError);
}

TEST(FeatureAlignLoss, BoundedAndScaleInvariant) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = oracle::random_tensor({6, 4, 4}, rng), s = oracle::random_tensor({6, 4, 4}, rng);
    const double l = feature_align_loss(t, s);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    Tensor scaled = s;
    for (int64_t site = 0; site < 16; ++site) {
      const float k = static_cast<float>(rng.uniform(0.1, 10.0));
      for (int64_t c = 0; c < 6; ++c) scaled[c * 16 + site] *= k;
    }
    EXPECT_NEAR(feature_align_loss(t, scaled), l, 1e-6);
    EXPECT_GT(l, 0.0);
  }
}

TEST(FeatureAlignLoss, ZeroSiteCountsAsOrthogonal) {
  Tensor t({2, 1, 2}, std::vector<float>{1, 0, 1, 0}), s({2, 1, 2}, std::vector<float>{1, 3, 1, 4});
  EXPECT_NEAR(feature_align_loss(t, s), 0.5, 1e-7);
}

// ------------------------------------------------------------ perturbation

TEST(Perturb, StrengthZeroIsIdentity) {
  const StereoSample s = tiny_dataset(1, 1)[0];
  const StereoSample p = perturb(s, 42, 0.0);
  EXPECT_TRUE(p.left.identical(s.left));
  EXPECT_TRUE(p.right.identical(s.right));
}

TEST(Perturb, DeterministicUnderSeedAndKeepsLabels) {
  const StereoSample s = tiny_dataset(2, 1)[0];
  const StereoSample a = perturb(s, 7, 1.0), b = perturb(s, 7, 1.0), c = perturb(s, 8, 1.0);
  EXPECT_TRUE(a.left.identical(b.left));
  EXPECT_TRUE(a.right.identical(b.right));
  EXPECT_FALSE(a.left.identical(c.left) && a.right.identical(c.right));
  EXPECT_TRUE(a.gt.identical(s.gt));
  EXPECT_TRUE(a.valid.identical(s.valid));
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const StereoSample p = perturb(s, seed, 2.0);
    for (float v : p.left.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : p.right.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Perturb, GaussianNoiseMagnitude) {
  Tensor probe({3, 64, 64}, 0.5f);
  const Tensor before = probe;
  SplitMix64 rng(9);
  add_gaussian_noise(probe, 0.1, rng);
  double change = 0.0;
  for (int64_t i = 0; i < probe.numel(); ++i) change += std::abs(probe[i] - before[i]);
  change /= static_cast<double>(probe.numel());
  EXPECT_GE(change, 0.05);
  EXPECT_LE(change, 0.11);
}

TEST(Perturb, BlurPreservesConstantsAndErasingUsesMean) {
  Tensor img({3, 8, 8}, 0.25f);
  gaussian_blur(img, 1.2);
  for (float v : img.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
  Tensor e({3, 4, 4}, 0.0f);
  e.at({0, 1, 1}) = 1.0f;
  erase_patch(e, 0, 0, 2, 2);
  EXPECT_FLOAT_EQ(e.at({0, 0, 0}), 0.25f);
  EXPECT_FLOAT_EQ(e.at({0, 1, 1}), 0.25f);
  EXPECT_FLOAT_EQ(e.at({0, 3, 3}), 0.0f);
}

// --------------------------------------------------------------- optimizer

TEST(AdamW, ZeroGradientZeroDecayKeepsWeights) {
  WeightStore w;
  w.insert("a", WeightEntry{Tensor({3}, std::vector<float>{1, -2, 3}), InitScheme::HeUniform, true});
  const WeightStore before = w;
  AdamState st;
  for (int i = 0; i < 5; ++i) adamw_step(w, {{"a", Tensor({3}, 0.0f)}}, st, AdamOptions{1e-2, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_TRUE(w.identical(before));
}

TEST(AdamW, ConstantGradientStepApproachesLr) {
  WeightStore w;
  w.insert("a", WeightEntry{Tensor({2}, 0.0f), InitScheme::HeUniform, true});
  AdamState st;
  const double lr = 1e-3;
  float prev = 0.0f;
  for (int i = 0; i < 3000; ++i) {
    prev = w.at("a")[0];
    adamw_step(w, {{"a", Tensor({2}, std::vector<float>{0.3f, -0.02f})}}, st, AdamOptions{lr, 0.9, 0.999, 1e-8, 0.0});
  }
  EXPECT_NEAR(prev - w.at("a")[0], lr, 0.01 * lr);
}

TEST(AdamW, DecayOnly) {
  WeightStore w;
  w.insert("a", WeightEntry{Tensor({2}, std::vector<float>{2.0f, -4.0f}), InitScheme::HeUniform, true});
  AdamState st;
  adamw_step(w, {{"a", Tensor({2}, 0.0f)}}, st, AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.5});
  EXPECT_FLOAT_EQ(w.at("a")[0], 2.0f * (1 - 0.05f));
  EXPECT_FLOAT_EQ(w.at("a")[1], -4.0f * (1 - 0.05f));
}

TEST(OneCycle, Examples) {
  EXPECT_EQ(one_cycle_lr(30, 100, 2e-4), 2e-4);
  EXPECT_EQ(one_cycle_lr(0, 100, 2e-4), 2e-4 / 25);
  EXPECT_EQ(one_cycle_lr(100, 100, 2e-4), 2e-4 / 25);
  double prev = 0.0;
  for (int s = 0; s <= 30; ++s) {
    EXPECT_GT(one_cycle_lr(s, 100, 1.0), prev);
    prev = one_cycle_lr(s, 100, 1.0);
  }
  for (int s = 31; s <= 100; ++s) {
    EXPECT_LT(one_cycle_lr(s, 100, 1.0), prev);
    prev = one_cycle_lr(s, 100, 1.0);
  }
}

// ------------------------------------------------------------ configs/logs

TEST(StageConfig, Validation) {
  StageConfig c;
  EXPECT_NO_THROW(c.validate());
  c.stage = Stage::Two;
  EXPECT_THROW(c.validate(), ConfigError);
  c.teacher_update = TeacherUpdate::Ema;
  EXPECT_NO_THROW(c.validate());
  c.lambda_disp = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.lambda_disp = 1.0;
  c.lambda_feat = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = StageConfig{};
  c.crop_height = 48;
  c.crop_width = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(teacher_update_from_string("soft"), ConfigError);
}

TEST(TrainLog, MonotoneAndFinite) {
  TrainLog log;
  log.add(StepRecord{0, 1.0, 1.0, 0.0, 1e-3, 2.0});
  EXPECT_THROW(log.add(StepRecord{0, 1.0, 1.0, 0.0, 1e-3, 2.0}), Error);
  EXPECT_THROW(log.add(StepRecord{1, NAN, 1.0, 0.0, 1e-3, 2.0}), NonFiniteError);
  log.add(StepRecord{1, 0.5, 0.5, 0.0, 1e-3, 1.0});
  MetricReport m;
  m.epe = 0.25;
  m.bad = {{1.0, 4.0}};
  m.pixel_count = 3;
  log.add(EvalRecord{1, m});
  EXPECT_EQ(log.to_jsonl(),
            "{\"kind\":\"step\",\"step\":0,\"loss\":1.0,\"disp_loss\":1.0,\"feat_loss\":0.0,\"lr\":0.001,\"grad_norm\":2.0}\n"
            "{\"kind\":\"step\",\"step\":1,\"loss\":0.5,\"disp_loss\":0.5,\"feat_loss\":0.0,\"lr\":0.001,\"grad_norm\":1.0}\n"
            "{\"kind\":\"eval\",\"step\":1,\"epe\":0.25,\"d1\":0.0,\"bad\":{\"1\":4.0},\"pixels\":3}\n");
}

TEST(BatchIndices, EpochsArePermutations) {
  std::vector<int> seen(10, 0);
  for (int64_t step = 0; step < 5; ++step)
    for (size_t i : batch_indices(10, 2, 3, step)) ++seen[i];
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(batch_indices(10, 4, 3, 7), batch_indices(10, 4, 3, 7));
}

// ------------------------------------------------------------------ stages

TEST(Stage1, LossDecreasesAndRunIsDeterministic) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(10, 2);
  const WeightStore init = WeightStore::initialize(net, 1);
  StageConfig c = quick(Stage::One, 40);
  c.peak_lr = 3e-3;
  const TrainResult a = run_stage1(data, init, net, c);
  const TrainResult b = run_stage1(data, init, net, c);
  EXPECT_LT(dataset_loss(a.weights, net, data), dataset_loss(init, net, data));
  EXPECT_TRUE(a.weights.identical(b.weights));
  EXPECT_EQ(a.log.to_jsonl(), b.log.to_jsonl());
  EXPECT_EQ(a.log.steps().size(), 40u);
}

TEST(Stage1, AuditedFirstStepFollowsAutodiffGradient) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(11, 3);
  const WeightStore init = WeightStore::initialize(net, 2);
  StageConfig c = quick(Stage::One, 1);
  c.weight_decay = 0.0;
  std::vector<StereoSample> batch;
  for (size_t i : batch_indices(data.size(), c.batch_size, c.seed, 0)) batch.push_back(data[i]);
  const BatchGradient g = batch_gradient(init, net, batch, 1.0);
  const TrainResult r = run_stage1(data, init, net, c);
  const double lr = one_cycle_lr(0, 1, c.peak_lr);
  int64_t checked = 0;
  for (const auto& [name, grad] : g.grads) {
    const Tensor& before = init.at(name);
    const Tensor& after = r.weights.at(name);
    for (int64_t i = 0; i < grad.numel(); ++i) {
      const double delta = static_cast<double>(after[i]) - before[i];
      if (std::abs(grad[i]) < 1e-5) continue;
      // First Adam step: -lr * g / (|g| + eps).
      const double expected = -lr * grad[i] / (std::abs(grad[i]) + 1e-8);
      ASSERT_NEAR(delta, expected, 1e-3 * lr + 1e-7 * std::abs(before[i])) << name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Stage2, DegenerateConfigReducesToStage1) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(12, 3);
  const WeightStore init = WeightStore::initialize(net, 3);
  StageConfig c2 = quick(Stage::Two, 1);
  c2.lambda_feat = 0.0;
  c2.perturb_strength = 0.0;
  const TrainResult s2 = run_stage2(data, init, net, c2);
  const TrainResult s1 = run_stage1(data, init, net, quick(Stage::One, 1));
  EXPECT_TRUE(s2.weights.identical(s1.weights));
}

TEST(Stage2, TeacherUpdatePolicies) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(13, 3);
  const WeightStore init = WeightStore::initialize(net, 4);
  StageConfig c = quick(Stage::Two, 2);
  const TrainResult fixed = run_stage2(data, init, net, c);
  ASSERT_TRUE(fixed.teacher.has_value());
  EXPECT_TRUE(fixed.teacher->identical(init));
  EXPECT_FALSE(fixed.weights.identical(init));

  c.teacher_update = TeacherUpdate::Ema;
  c.ema_decay = 1.0;
  const TrainResult ema1 = run_stage2(data, init, net, c);
  EXPECT_TRUE(ema1.teacher->identical(init));
  EXPECT_TRUE(ema1.weights.identical(fixed.weights));

  c.ema_decay = 0.5;
  const TrainResult ema = run_stage2(data, init, net, c);
  EXPECT_FALSE(ema.teacher->identical(init));

  c.teacher_update = TeacherUpdate::HardCopy;
  c.hard_copy_interval = 1;
  const TrainResult copy = run_stage2(data, init, net, c);
  EXPECT_TRUE(copy.teacher->identical(copy.weights));
}

TEST(Stage2, ArchitectureMismatch) {
  const NetworkConfig net = small_net();
  NetworkConfig other = net;
  other.agg_variant = AggVariant::Interleaved;
  const Dataset data = tiny_dataset(14, 2);
  EXPECT_THROW(run_stage2(data, WeightStore::initialize(net, 1), WeightStore::initialize(other, 1), net,
                          quick(Stage::Two, 1)),
               ShapeError);
}

TEST(Stage3, ExactOracleMatchesStage1) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(15, 3);
  const WeightStore init = WeightStore::initialize(net, 5);
  const TrainResult s3 = run_stage3(data, SyntheticOracle(), init, net, quick(Stage::Three, 1));
  const TrainResult s1 = run_stage1(data, init, net, quick(Stage::One, 1));
  EXPECT_TRUE(s3.weights.identical(s1.weights));
}

TEST(Stage3, OracleIsFrozenAndNonNegative) {
  const StereoSample s = tiny_dataset(16, 1)[0];
  const SyntheticOracle noisy(3.0, 7);
  const DisparityMap a = noisy.label(s), b = noisy.label(s);
  EXPECT_TRUE(a.values.identical(b.values));
  EXPECT_FALSE(a.values.identical(s.gt));
  for (float v : a.values.data()) EXPECT_GE(v, 0.0f);
  EXPECT_TRUE(SyntheticOracle().label(s).values.identical(s.gt));
}

// Three-point sweep: converged error against the exact ground truth grows
// with the label noise. About six minutes on one core.
TEST(Stage3, LabelNoiseSweepRaisesConvergedEpe) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(40, 16);
  const WeightStore init = WeightStore::initialize(net, 2);
  StageConfig c = quick(Stage::Three, 600);
  c.peak_lr = 1e-3;
  std::vector<double> epes;
  for (double sigma : {0.0, 4.0, 12.0}) {
    const TrainResult r = run_stage3(data, SyntheticOracle(sigma, 9), init, net, c);
    epes.push_back(evaluate(r.weights, net, data).epe);
  }
  EXPECT_LT(epes[0], epes[1]);
  EXPECT_LT(epes[1], epes[2]);
  RecordProperty("epe_by_sigma", std::to_string(epes[0]) + "," + std::to_string(epes[1]) + "," +
                                     std::to_string(epes[2]));
}

TEST(Evaluate, PerturbedSplitIsDeterministic) {
  const NetworkConfig net = small_net();
  const Dataset data = tiny_dataset(17, 2);
  const WeightStore w = WeightStore::initialize(net, 6);
  EvalOptions o;
  o.perturb_strength = 1.0;
  o.perturb_seed = 3;
  const MetricReport a = evaluate(w, net, data, o), b = evaluate(w, net, data, o);
  EXPECT_EQ(a.epe, b.epe);
  o.non_occluded = true;
  EXPECT_LE(evaluate(w, net, data, o).pixel_count, a.pixel_count);
}
