#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "las/autodiff.hpp"
#include "las/metrics.hpp"
#include "las/network.hpp"
#include "las/rng.hpp"
#include "las/synthetic.hpp"

namespace las {

using Dataset = std::vector<StereoSample>;

// ------------------------------------------------------------ perturbation

// Individual transforms of the perturbation bank. Images are [3,H,W]; each
// transform clamps its result to [0,1].
void brightness_contrast(Tensor& image, double brightness, double contrast);
void color_scale(Tensor& image, const std::array<double, 3>& scale);
void gamma_correct(Tensor& image, double gamma);
void add_gaussian_noise(Tensor& image, double sigma, SplitMix64& rng);
void gaussian_blur(Tensor& image, double sigma);
// Fills the rectangle [x0,x0+w) x [y0,y0+h) (clipped) with its mean colour.
void erase_patch(Tensor& image, int64_t x0, int64_t y0, int64_t w, int64_t h);

// Random composition of the bank, deterministic in `seed`. Ground truth is
// untouched; strength 0 returns the sample unchanged. Strength 1 is the
// default "strong" setting: contrast +-30%, brightness +-0.15, per-channel
// gain +-20%, right-only gamma and brightness jitter, noise sigma up to 0.06,
// blur sigma up to 1.5 px and one erased patch on the right image.
StereoSample perturb(const StereoSample& sample, uint64_t seed, double strength);

// -------------------------------------------------------------- optimizer

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// AdamW with bias-corrected moments and decoupled decay
// (w <- w - lr*wd*w - lr*m_hat/(sqrt(v_hat)+eps)). Only names present in
// `grads` are updated.
void adamw_step(WeightStore& weights, const ad::GradStore& grads, AdamState& state, const AdamOptions& opt);

// Linear warmup from peak/25 to peak over the first 30% of steps, then cosine
// decay back to peak/25 at `total`.
double one_cycle_lr(int64_t step, int64_t total, double peak);

double global_norm(const ad::GradStore& grads);

// ---------------------------------------------------------------- configs

enum class Stage { One = 1, Two = 2, Three = 3 };
enum class TeacherUpdate { Fixed, Ema, HardCopy };
std::string to_string(TeacherUpdate t);
TeacherUpdate teacher_update_from_string(const std::string& s);

struct StageConfig {
  Stage stage = Stage::One;
  int64_t steps = 1000;
  int64_t batch_size = 4;
  double peak_lr = 2e-3;
  int64_t crop_height = 0;  // 0 keeps the full image
  int64_t crop_width = 0;
  std::optional<TeacherUpdate> teacher_update;
  double ema_decay = 0.999;
  int64_t hard_copy_interval = 200;
  double lambda_disp = 1.0;
  double lambda_feat = 1.0;
  uint64_t seed = 0;

  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double max_grad_norm = 0.0;  // 0 disables clipping
  double perturb_strength = 1.0;  // student inputs in stage two
  int64_t eval_every = 0;         // 0: evaluate once, after the last step

  // Throws ConfigError.
  void validate() const;
};

// ------------------------------------------------------------------- logs

struct StepRecord {
  int64_t step = 0;
  double loss = 0.0;
  double disp_loss = 0.0;
  double feat_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EvalRecord {
  int64_t step = 0;
  MetricReport metrics;
};

class TrainLog {
 public:
  // Both throw Error on a non-monotone step index or a non-finite value.
  void add(const StepRecord& r);
  void add(const EvalRecord& r);
  const std::vector<StepRecord>& steps() const { return steps_; }
  const std::vector<EvalRecord>& evals() const { return evals_; }
  // One JSON object per line, steps then evals interleaved by step.
  std::string to_jsonl() const;
  void write(const std::string& path) const;

 private:
  std::vector<StepRecord> steps_;
  std::vector<EvalRecord> evals_;
};

// ----------------------------------------------------------- evaluation

struct EvalOptions {
  double perturb_strength = 0.0;
  uint64_t perturb_seed = 0;
  bool non_occluded = false;
  std::vector<double> thresholds = {1.0, 2.0, 3.0};
};

MetricReport evaluate(const WeightStore& weights, const NetworkConfig& net, const Dataset& data,
                      const EvalOptions& opt = {});

// ---------------------------------------------------------------- oracles

// Maps a stereo pair to dense labels. Implementations must be frozen: the
// same sample always yields the same map.
class DisparityOracle {
 public:
  virtual ~DisparityOracle() = default;
  virtual DisparityMap label(const StereoSample& sample) const = 0;
};

// The generator's exact ground truth, optionally corrupted by additive
// N(0, sigma) noise drawn from (seed, sample id) and clamped at zero.
class SyntheticOracle : public DisparityOracle {
 public:
  explicit SyntheticOracle(double noise_sigma = 0.0, uint64_t seed = 0) : sigma_(noise_sigma), seed_(seed) {}
  DisparityMap label(const StereoSample& sample) const override;

 private:
  double sigma_;
  uint64_t seed_;
};

// ---------------------------------------------------------------- stages

struct TrainHooks {
  const Dataset* eval_set = nullptr;
  EvalOptions eval_options;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

struct TrainResult {
  WeightStore weights;
  TrainLog log;
  std::optional<WeightStore> teacher;  // stage two only
};

// Supervised training with the disparity loss, no perturbation.
TrainResult run_stage1(const Dataset& data, const WeightStore& init, const NetworkConfig& net,
                       const StageConfig& config, const TrainHooks& hooks = {});

// Self-distillation: the teacher sees clean pairs, the student perturbed
// ones; loss = lambda_disp * disparity + lambda_feat * feature alignment on
// the fused quarter-resolution features. Throws ShapeError when teacher and
// student weights differ in structure.
TrainResult run_stage2(const Dataset& data, const WeightStore& student_init, const WeightStore& teacher_init,
                       const NetworkConfig& net, const StageConfig& config, const TrainHooks& hooks = {});
TrainResult run_stage2(const Dataset& data, const WeightStore& init, const NetworkConfig& net,
                       const StageConfig& config, const TrainHooks& hooks = {});

// Supervised training against labels produced once, up front, by `oracle`.
TrainResult run_stage3(const Dataset& unlabeled, const DisparityOracle& oracle, const WeightStore& init,
                       const NetworkConfig& net, const StageConfig& config, const TrainHooks& hooks = {});

// Dataset positions consumed at `step`: consecutive slices of per-epoch
// permutations drawn from (seed, epoch).
std::vector<size_t> batch_indices(size_t dataset_size, int64_t batch_size, uint64_t seed, int64_t step);

// Batch gradient of the configured loss at `weights`, as used by one step of
// the given stage (averaged over the batch). Exposed for step audits.
struct BatchGradient {
  ad::GradStore grads;
  double loss = 0.0;
  double disp_loss = 0.0;
  double feat_loss = 0.0;
};
// Without teacher features this is the supervised loss of stages one and
// three.
BatchGradient batch_gradient(const WeightStore& weights, const NetworkConfig& net, const std::vector<StereoSample>& batch,
                             double lambda_disp, const std::vector<Tensor>* teacher_features = nullptr,
                             double lambda_feat = 0.0);

// ------------------------------------------------------- gradient check

// Central-difference check of the whole network under the disparity loss on
// a random pair of size height x width with random ground truth. Running
// statistics enter as constants; trainable tensors are perturbed.
struct NetworkGradCheck {
  ad::FiniteDiffReport report;
  std::string worst_name;
};
NetworkGradCheck network_gradient_check(const NetworkConfig& net, const WeightStore& weights, int64_t height,
                                        int64_t width, int64_t samples, uint64_t seed, double eps = 1e-3,
                                        double tolerance = 1e-2);

}  // namespace las
