#include "las/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace las {

// ------------------------------------------------------------ perturbation

namespace {

void clamp01(Tensor& t) {
  for (float& v : t.data()) v = std::clamp(v, 0.0f, 1.0f);
}

void check_image(const Tensor& image, const char* what) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError(std::string(what) + ": expected [3,H,W], got " + shape_str(image.shape()));
}

}  // namespace

void brightness_contrast(Tensor& image, double brightness, double contrast) {
  check_image(image, "brightness_contrast");
  for (float& v : image.data()) v = static_cast<float>((v - 0.5) * contrast + 0.5 + brightness);
  clamp01(image);
}

void color_scale(Tensor& image, const std::array<double, 3>& scale) {
  check_image(image, "color_scale");
  const int64_t plane = image.dim(1) * image.dim(2);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < plane; ++i) image[c * plane + i] = static_cast<float>(image[c * plane + i] * scale[c]);
  clamp01(image);
}

void gamma_correct(Tensor& image, double gamma) {
  check_image(image, "gamma_correct");
  for (float& v : image.data()) v = static_cast<float>(std::pow(std::max(0.0f, v), gamma));
  clamp01(image);
}

void add_gaussian_noise(Tensor& image, double sigma, SplitMix64& rng) {
  check_image(image, "add_gaussian_noise");
  for (float& v : image.data()) v = static_cast<float>(v + sigma * rng.normal());
  clamp01(image);
}

void gaussian_blur(Tensor& image, double sigma) {
  check_image(image, "gaussian_blur");
  if (sigma <= 0.0) return;
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    total += k[static_cast<size_t>(i + radius)];
  }
  for (double& w : k) w /= total;
  const int64_t h = image.dim(1), w = image.dim(2);
  std::vector<double> row(static_cast<size_t>(std::max(h, w)));
  for (int64_t c = 0; c < 3; ++c) {
    float* p = image.ptr() + c * h * w;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int64_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * p[y * w + std::clamp<int64_t>(x + i, 0, w - 1)];
        row[static_cast<size_t>(x)] = acc;
      }
      for (int64_t x = 0; x < w; ++x) p[y * w + x] = static_cast<float>(row[static_cast<size_t>(x)]);
    }
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t y = 0; y < h; ++y) {
        double acc = 0.0;
        for (int64_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * p[std::clamp<int64_t>(y + i, 0, h - 1) * w + x];
        row[static_cast<size_t>(y)] = acc;
      }
      for (int64_t y = 0; y < h; ++y) p[y * w + x] = static_cast<float>(row[static_cast<size_t>(y)]);
    }
  }
  clamp01(image);
}

void erase_patch(Tensor& image, int64_t x0, int64_t y0, int64_t w, int64_t h) {
  check_image(image, "erase_patch");
  const int64_t H = image.dim(1), W = image.dim(2);
  const int64_t xa = std::clamp<int64_t>(x0, 0, W), xb = std::clamp<int64_t>(x0 + w, 0, W);
  const int64_t ya = std::clamp<int64_t>(y0, 0, H), yb = std::clamp<int64_t>(y0 + h, 0, H);
  if (xa >= xb || ya >= yb) return;
  for (int64_t c = 0; c < 3; ++c) {
    float* p = image.ptr() + c * H * W;
    double mean = 0.0;
    for (int64_t y = ya; y < yb; ++y)
      for (int64_t x = xa; x < xb; ++x) mean += p[y * W + x];
    mean /= static_cast<double>((yb - ya) * (xb - xa));
    for (int64_t y = ya; y < yb; ++y)
      for (int64_t x = xa; x < xb; ++x) p[y * W + x] = static_cast<float>(mean);
  }
}

StereoSample perturb(const StereoSample& sample, uint64_t seed, double strength) {
  if (strength <= 0.0) return sample;
  check_image(sample.left, "perturb");
  StereoSample out = sample;
  const double s = strength;
  auto stream = [&](uint64_t k) { return SplitMix64(mix_seed(seed, k)); };

  if (SplitMix64 r = stream(1); r.uniform() < 0.8) {
    const double b = r.uniform(-0.15, 0.15) * s, c = std::max(0.1, 1.0 + r.uniform(-0.3, 0.3) * s);
    brightness_contrast(out.left, b, c);
    brightness_contrast(out.right, b, c);
  }
  if (SplitMix64 r = stream(2); r.uniform() < 0.8) {
    std::array<double, 3> g;
    for (double& v : g) v = std::max(0.1, 1.0 + r.uniform(-0.2, 0.2) * s);
    color_scale(out.left, g);
    color_scale(out.right, g);
  }
  if (SplitMix64 r = stream(3); r.uniform() < 0.5) {
    gamma_correct(out.right, std::max(0.1, 1.0 + r.uniform(-0.3, 0.3) * s));
    brightness_contrast(out.right, r.uniform(-0.08, 0.08) * s, 1.0);
  }
  if (SplitMix64 r = stream(4); r.uniform() < 0.5) {
    const double sigma = r.uniform(0.3, 1.5) * s;
    gaussian_blur(out.left, sigma);
    gaussian_blur(out.right, sigma);
  }
  if (SplitMix64 r = stream(5); r.uniform() < 0.8) {
    const double sigma = r.uniform(0.0, 0.06) * s;
    SplitMix64 nl = stream(6), nr = stream(7);
    add_gaussian_noise(out.left, sigma, nl);
    add_gaussian_noise(out.right, sigma, nr);
  }
  if (SplitMix64 r = stream(8); r.uniform() < 0.5) {
    const int64_t h = sample.height(), w = sample.width();
    const auto pw = static_cast<int64_t>(std::round(r.uniform(0.05, 0.25) * s * static_cast<double>(w)));
    const auto ph = static_cast<int64_t>(std::round(r.uniform(0.05, 0.25) * s * static_cast<double>(h)));
    erase_patch(out.right, r.uniform_int(0, w - 1), r.uniform_int(0, h - 1), pw, ph);
  }
  return out;
}

// -------------------------------------------------------------- optimizer

void adamw_step(WeightStore& weights, const ad::GradStore& grads, AdamState& state, const AdamOptions& opt) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& w = weights.mutable_at(name);
    if (!w.same_shape(g)) throw ShapeError("adamw_step: gradient for " + name + " has shape " + shape_str(g.shape()));
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(w.shape())).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(w.shape())).first->second;
    for (int64_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i];
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double wi = w[i];
      if (opt.weight_decay != 0.0) wi -= opt.lr * opt.weight_decay * wi;
      if (mi != 0.0) wi -= opt.lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
      w[i] = static_cast<float>(wi);
    }
  }
}

double one_cycle_lr(int64_t step, int64_t total, double peak) {
  if (total <= 0) throw ConfigError("one_cycle_lr: total steps must be positive");
  const double floor = peak / 25.0;
  const double t = static_cast<double>(std::clamp<int64_t>(step, 0, total));
  const double warm = 0.3 * static_cast<double>(total);
  if (t <= warm) return warm > 0.0 ? std::lerp(floor, peak, t / warm) : peak;
  const double frac = (t - warm) / (static_cast<double>(total) - warm);
  return std::lerp(floor, peak, 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

double global_norm(const ad::GradStore& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (float v : g.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

// ---------------------------------------------------------------- configs

std::string to_string(TeacherUpdate t) {
  switch (t) {
    case TeacherUpdate::Fixed: return "fixed";
    case TeacherUpdate::Ema: return "ema";
    case TeacherUpdate::HardCopy: return "hard-copy";
  }
  return "?";
}

TeacherUpdate teacher_update_from_string(const std::string& s) {
  for (TeacherUpdate t : {TeacherUpdate::Fixed, TeacherUpdate::Ema, TeacherUpdate::HardCopy})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown teacher update '" + s + "'");
}

void StageConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("stage config: " + m); };
  if (steps <= 0) fail("steps must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (crop_height < 0 || crop_width < 0 || crop_height % 32 || crop_width % 32)
    fail("crop extents must be non-negative multiples of 32");
  if ((crop_height == 0) != (crop_width == 0)) fail("set both crop extents or neither");
  if (stage == Stage::Two && !teacher_update) fail("stage two requires teacher_update");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("ema_decay must lie in [0,1]");
  if (hard_copy_interval <= 0) fail("hard_copy_interval must be positive");
  if (!(lambda_disp > 0.0)) fail("lambda_disp must be positive");
  if (!(lambda_feat >= 0.0)) fail("lambda_feat must be non-negative");
  if (weight_decay < 0.0 || max_grad_norm < 0.0 || perturb_strength < 0.0 || eval_every < 0)
    fail("weight_decay, max_grad_norm, perturb_strength and eval_every must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0,1)");
}

// ------------------------------------------------------------------- logs

namespace {

void require_finite(double v, const char* what, int64_t step) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string("train log: ") + what + " is not finite at step " + std::to_string(step));
}

}  // namespace

void TrainLog::add(const StepRecord& r) {
  if (!steps_.empty() && r.step <= steps_.back().step) throw Error("train log: step index must increase");
  require_finite(r.loss, "loss", r.step);
  require_finite(r.disp_loss, "disp_loss", r.step);
  require_finite(r.feat_loss, "feat_loss", r.step);
  require_finite(r.lr, "lr", r.step);
  require_finite(r.grad_norm, "grad_norm", r.step);
  steps_.push_back(r);
}

void TrainLog::add(const EvalRecord& r) {
  if (!evals_.empty() && r.step <= evals_.back().step) throw Error("train log: eval step index must increase");
  require_finite(r.metrics.epe, "epe", r.step);
  require_finite(r.metrics.d1, "d1", r.step);
  for (const auto& [x, v] : r.metrics.bad) require_finite(v, "bad", r.step);
  evals_.push_back(r);
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  size_t e = 0;
  auto emit_eval = [&](const EvalRecord& r) {
    nlohmann::ordered_json j{{"kind", "eval"}, {"step", r.step}, {"epe", r.metrics.epe}, {"d1", r.metrics.d1}};
    nlohmann::ordered_json bad = nlohmann::ordered_json::object();
    for (const auto& [x, v] : r.metrics.bad) {
      char key[32];
      std::snprintf(key, sizeof key, "%g", x);
      bad[key] = v;
    }
    j["bad"] = bad;
    j["pixels"] = r.metrics.pixel_count;
    out += j.dump() + "\n";
  };
  for (const StepRecord& r : steps_) {
    while (e < evals_.size() && evals_[e].step < r.step) emit_eval(evals_[e++]);
    nlohmann::ordered_json j{{"kind", "step"},         {"step", r.step}, {"loss", r.loss}, {"disp_loss", r.disp_loss},
                             {"feat_loss", r.feat_loss}, {"lr", r.lr},     {"grad_norm", r.grad_norm}};
    out += j.dump() + "\n";
  }
  while (e < evals_.size()) emit_eval(evals_[e++]);
  return out;
}

void TrainLog::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << to_jsonl();
  if (!f) throw IoError("failed writing " + path);
}

// ----------------------------------------------------------- evaluation

MetricReport evaluate(const WeightStore& weights, const NetworkConfig& net, const Dataset& data, const EvalOptions& opt) {
  if (data.empty()) throw Error("evaluate: empty dataset");
  MetricAccumulator acc(opt.thresholds);
  for (const StereoSample& raw : data) {
    const StereoSample s = perturb(raw, mix_seed(opt.perturb_seed, raw.id), opt.perturb_strength);
    ForwardResult r = forward(s.left, s.right, weights, net);
    Tensor mask = s.valid;
    if (opt.non_occluded && !s.occluded.empty())
      for (int64_t i = 0; i < mask.numel(); ++i)
        if (s.occluded[i] > 0.5f) mask[i] = 0.0f;
    acc.add(r.disparity.values, s.gt, mask);
  }
  return acc.result();
}

// ---------------------------------------------------------------- oracles

DisparityMap SyntheticOracle::label(const StereoSample& sample) const {
  DisparityMap d{sample.gt, sample.valid};
  if (sigma_ > 0.0) {
    SplitMix64 rng(mix_seed(seed_, sample.id));
    for (float& v : d.values.data()) v = static_cast<float>(std::max(0.0, v + sigma_ * rng.normal()));
  }
  return d;
}

// ---------------------------------------------------------------- stages

std::vector<size_t> batch_indices(size_t dataset_size, int64_t batch_size, uint64_t seed, int64_t step) {
  if (dataset_size == 0) throw Error("batch_indices: empty dataset");
  std::vector<size_t> out;
  const auto n = static_cast<int64_t>(dataset_size);
  int64_t cached_epoch = -1;
  std::vector<size_t> perm(dataset_size);
  for (int64_t k = 0; k < batch_size; ++k) {
    const int64_t pos = step * batch_size + k;
    const int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      for (size_t i = 0; i < dataset_size; ++i) perm[i] = i;
      SplitMix64 rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
      for (size_t i = dataset_size; i-- > 1;) std::swap(perm[i], perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<size_t>(pos % n)]);
  }
  return out;
}

BatchGradient batch_gradient(const WeightStore& weights, const NetworkConfig& net, const std::vector<StereoSample>& batch,
                             double lambda_disp, const std::vector<Tensor>* teacher_features, double lambda_feat) {
  if (batch.empty()) throw Error("batch_gradient: empty batch");
  if (teacher_features && teacher_features->size() != batch.size())
    throw ShapeError("batch_gradient: one teacher feature map per sample required");
  BatchGradient out;
  for (size_t i = 0; i < batch.size(); ++i) {
    const StereoSample& s = batch[i];
    ad::Tape tape;
    ParamSource ps(tape, weights);
    GraphOutput g = graph::forward(ps, tape.constant(s.left), tape.constant(s.right), net);
    ad::Var disp = ad::disparity_loss(g.disparity, s.gt, s.valid);
    std::vector<std::pair<double, ad::Var>> terms{{lambda_disp, disp}};
    if (teacher_features) {
      ad::Var feat = ad::feature_align_loss(tape.constant((*teacher_features)[i]), g.left_features);
      terms.emplace_back(lambda_feat, feat);
      out.feat_loss += feat.item();
    }
    ad::Var loss = ad::combine(terms);
    ad::GradStore gs = tape.backward(loss);
    out.loss += loss.item();
    out.disp_loss += disp.item();
    if (i == 0) {
      out.grads = std::move(gs);
      continue;
    }
    for (auto& [name, acc] : out.grads) {
      const Tensor& add = gs.at(name);
      for (int64_t k = 0; k < acc.numel(); ++k) acc[k] += add[k];
    }
  }
  const auto n = static_cast<double>(batch.size());
  if (batch.size() > 1)
    for (auto& [name, acc] : out.grads)
      for (float& v : acc.data()) v = static_cast<float>(v / n);
  out.loss /= n;
  out.disp_loss /= n;
  out.feat_loss /= n;
  return out;
}

namespace {

StereoSample crop(const StereoSample& s, int64_t ch, int64_t cw, SplitMix64& rng) {
  if (ch == 0 || (ch == s.height() && cw == s.width())) return s;
  if (ch > s.height() || cw > s.width())
    throw ConfigError("crop " + std::to_string(ch) + "x" + std::to_string(cw) + " exceeds sample size");
  const int64_t y0 = rng.uniform_int(0, s.height() - ch), x0 = rng.uniform_int(0, s.width() - cw);
  const int64_t H = s.height(), W = s.width();
  StereoSample o = s;
  o.left = Tensor({3, ch, cw});
  o.right = Tensor({3, ch, cw});
  o.gt = Tensor({ch, cw});
  o.valid = Tensor({ch, cw});
  o.occluded = s.occluded.empty() ? Tensor() : Tensor({ch, cw});
  for (int64_t y = 0; y < ch; ++y)
    for (int64_t x = 0; x < cw; ++x) {
      const int64_t src = (y0 + y) * W + x0 + x, dst = y * cw + x;
      for (int64_t c = 0; c < 3; ++c) {
        o.left[c * ch * cw + dst] = s.left[c * H * W + src];
        o.right[c * ch * cw + dst] = s.right[c * H * W + src];
      }
      o.gt[dst] = s.gt[src];
      // The match must also land inside the cropped right image.
      o.valid[dst] = s.valid[src] > 0.5f && static_cast<double>(x) - s.gt[src] >= 0.0 ? 1.0f : 0.0f;
      if (!o.occluded.empty()) o.occluded[dst] = s.occluded[src];
    }
  return o;
}

using GradFn = std::function<BatchGradient(const WeightStore&, const std::vector<StereoSample>&, int64_t)>;
using AfterStepFn = std::function<void(const WeightStore&, int64_t)>;

TrainResult train_loop(const Dataset& data, const WeightStore& init, const NetworkConfig& net, const StageConfig& cfg,
                       const TrainHooks& hooks, const GradFn& grad_fn, const AfterStepFn& after_step = {}) {
  cfg.validate();
  net.validate();
  init.validate_against(net);
  if (data.empty()) throw Error("training: empty dataset");
  for (const StereoSample& s : data) check_sample(s);

  TrainResult result{init, {}, std::nullopt};
  AdamState state;
  auto run_eval = [&](int64_t step) {
    if (!hooks.eval_set) return;
    EvalRecord r{step, evaluate(result.weights, net, *hooks.eval_set, hooks.eval_options)};
    result.log.add(r);
    if (hooks.on_eval) hooks.on_eval(r);
  };

  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<StereoSample> batch;
    const std::vector<size_t> idx = batch_indices(data.size(), cfg.batch_size, cfg.seed, step);
    for (size_t k = 0; k < idx.size(); ++k) {
      SplitMix64 rng(mix_seed(mix_seed(cfg.seed, 0xC809), static_cast<uint64_t>(step * cfg.batch_size) + k));
      batch.push_back(crop(data[idx[k]], cfg.crop_height, cfg.crop_width, rng));
    }
    BatchGradient bg = grad_fn(result.weights, batch, step);
    const double norm = global_norm(bg.grads);
    if (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm) {
      const double k = cfg.max_grad_norm / norm;
      for (auto& [name, g] : bg.grads)
        for (float& v : g.data()) v = static_cast<float>(v * k);
    }
    const double lr = one_cycle_lr(step, cfg.steps, cfg.peak_lr);
    adamw_step(result.weights, bg.grads, state, AdamOptions{lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
    StepRecord rec{step, bg.loss, bg.disp_loss, bg.feat_loss, lr, norm};
    result.log.add(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (after_step) after_step(result.weights, step);
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 != cfg.steps) run_eval(step);
  }
  run_eval(cfg.steps - 1);
  return result;
}

}  // namespace

TrainResult run_stage1(const Dataset& data, const WeightStore& init, const NetworkConfig& net, const StageConfig& config,
                       const TrainHooks& hooks) {
  return train_loop(data, init, net, config, hooks,
                    [&](const WeightStore& w, const std::vector<StereoSample>& batch, int64_t) {
                      return batch_gradient(w, net, batch, config.lambda_disp);
                    });
}

TrainResult run_stage2(const Dataset& data, const WeightStore& student_init, const WeightStore& teacher_init,
                       const NetworkConfig& net, const StageConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (!student_init.same_structure(teacher_init)) throw ShapeError("stage two: teacher/student architecture mismatch");
  teacher_init.validate_against(net);
  WeightStore teacher = teacher_init;
  const uint64_t perturb_seed = mix_seed(config.seed, 0x5732);
  const bool distill = config.lambda_feat > 0.0;

  auto grad_fn = [&](const WeightStore& w, const std::vector<StereoSample>& batch, int64_t step) {
    std::vector<StereoSample> student_view;
    std::vector<Tensor> teacher_features;
    for (size_t k = 0; k < batch.size(); ++k) {
      const uint64_t pos = static_cast<uint64_t>(step * config.batch_size) + k;
      student_view.push_back(perturb(batch[k], mix_seed(perturb_seed, pos), config.perturb_strength));
      if (distill) teacher_features.push_back(extract_features(batch[k].left, teacher, net));
    }
    return batch_gradient(w, net, student_view, config.lambda_disp, distill ? &teacher_features : nullptr,
                          config.lambda_feat);
  };
  auto after_step = [&](const WeightStore& student, int64_t step) {
    switch (*config.teacher_update) {
      case TeacherUpdate::Fixed: break;
      case TeacherUpdate::Ema:
        if (config.ema_decay >= 1.0) break;
        for (const auto& [name, e] : student.entries()) {
          if (!e.trainable) continue;
          Tensor& t = teacher.mutable_at(name);
          for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<float>(config.ema_decay * t[i] + (1.0 - config.ema_decay) * e.value[i]);
        }
        break;
      case TeacherUpdate::HardCopy:
        if ((step + 1) % config.hard_copy_interval == 0) teacher = student;
        break;
    }
  };
  TrainResult r = train_loop(data, student_init, net, config, hooks, grad_fn, after_step);
  r.teacher = teacher;
  return r;
}

TrainResult run_stage2(const Dataset& data, const WeightStore& init, const NetworkConfig& net, const StageConfig& config,
                       const TrainHooks& hooks) {
  return run_stage2(data, init, init, net, config, hooks);
}

TrainResult run_stage3(const Dataset& unlabeled, const DisparityOracle& oracle, const WeightStore& init,
                       const NetworkConfig& net, const StageConfig& config, const TrainHooks& hooks) {
  Dataset labeled;
  labeled.reserve(unlabeled.size());
  for (const StereoSample& s : unlabeled) {
    StereoSample l = s;
    DisparityMap d = oracle.label(s);
    if (d.values.shape() != s.gt.shape() || d.valid.shape() != s.gt.shape())
      throw ShapeError("stage three: oracle labels must match the image size");
    l.gt = std::move(d.values);
    l.valid = std::move(d.valid);
    l.provenance = Provenance::PseudoLabeled;
    labeled.push_back(std::move(l));
  }
  return train_loop(labeled, init, net, config, hooks,
                    [&](const WeightStore& w, const std::vector<StereoSample>& batch, int64_t) {
                      return batch_gradient(w, net, batch, config.lambda_disp);
                    });
}

// ------------------------------------------------------- gradient check

NetworkGradCheck network_gradient_check(const NetworkConfig& net, const WeightStore& weights, int64_t height,
                                        int64_t width, int64_t samples, uint64_t seed, double eps,
                                        double tolerance) {
  weights.validate_against(net);
  SplitMix64 rng(mix_seed(seed, 0x6C4B));
  Tensor left({3, height, width}), right({3, height, width}), gt({height, width});
  for (float& v : left.data()) v = static_cast<float>(rng.uniform());
  for (float& v : right.data()) v = static_cast<float>(rng.uniform());
  for (float& v : gt.data()) v = static_cast<float>(rng.uniform(0.0, net.d_max / 3.0));
  check_input_dims(left, "network_gradient_check");
  const Tensor mask({height, width}, 1.0f);

  std::vector<std::string> names;
  std::vector<Tensor> params;
  for (const auto& [name, e] : weights.entries())
    if (e.trainable) {
      names.push_back(name);
      params.push_back(e.value);
    }
  ad::ScalarFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    std::map<std::string, ad::Var> bound;
    for (size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], v[i]);
    for (const auto& [name, e] : weights.entries())
      if (!e.trainable) bound.emplace(name, t.constant(e.value));
    ParamSource ps(t, bound);
    GraphOutput g = graph::forward(ps, t.constant(left), t.constant(right), net);
    return ad::disparity_loss(g.disparity, gt, mask);
  };
  NetworkGradCheck out;
  out.report = ad::finite_diff_check(fn, params, eps, tolerance, samples, seed);
  if (out.report.worst_param >= 0) out.worst_name = names[static_cast<size_t>(out.report.worst_param)];
  return out;
}

}  // namespace las
