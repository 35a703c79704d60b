#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "las/autodiff.hpp"
#include "las/tensor.hpp"

namespace las {

// Wirings of the hybrid cost aggregation.
enum class AggVariant { TwoDOnly, Bilateral, TwoDThenThreeD, ThreeDThenTwoD, Interleaved };
enum class SizePreset { Micro, PaperLike, Custom };

std::string to_string(AggVariant v);
AggVariant agg_variant_from_string(const std::string& s);
std::string to_string(SizePreset p);

// One pyramid level of the inverted-residual backbone. The first block of a
// stage downsamples by two.
struct BackboneStage {
  int64_t channels;
  int64_t blocks;
  int64_t expansion;
};

struct NetworkConfig {
  SizePreset preset = SizePreset::Micro;
  int64_t d_max = 64;  // full-resolution maximum disparity
  int64_t stem_channels = 16;
  std::array<BackboneStage, 4> stages{};  // scales 1/4, 1/8, 1/16, 1/32
  int64_t fused_channels = 48;            // N_c
  AggVariant agg_variant = AggVariant::ThreeDThenTwoD;
  std::array<int64_t, 3> three_d_kernel{3, 3, 3};
  double three_d_proportion = 0.048;  // target share of aggregation MACs in G_3D
  int64_t three_d_width = 0;          // 0: derived from three_d_proportion
  int64_t two_d_layers = 3;
  int64_t two_d_channels = 48;
  int64_t two_d_expansion = 4;
  int64_t two_d_kernel = 7;
  int64_t head_channels = 32;
  // Resolution at which the 3D width is derived from the proportion.
  int64_t reference_height = 64;
  int64_t reference_width = 128;

  static NetworkConfig micro();
  static NetworkConfig paper_like();
  static NetworkConfig preset_named(const std::string& name);

  int64_t levels() const { return d_max / 4; }
  void validate() const;
  // Width of the 3D aggregation block after resolving the proportion knob.
  int64_t resolved_three_d_width() const;
  // Channel width of each thin 3D block of the interleaved wiring.
  int64_t interleaved_three_d_width() const;
};

// Closed-form multiply-accumulate counts of the aggregation blocks for a
// quarter-resolution volume of `levels` x h4 x w4.
struct AggregationMacs {
  int64_t two_d = 0;
  int64_t three_d = 0;
  int64_t total() const { return two_d + three_d; }
  double three_d_fraction() const { return total() ? static_cast<double>(three_d) / total() : 0.0; }
};
AggregationMacs aggregation_macs(const NetworkConfig& config, int64_t h4, int64_t w4);
AggregationMacs aggregation_macs_for_width(const NetworkConfig& config, int64_t three_d_width, int64_t h4, int64_t w4);

// ---------------------------------------------------------------- weights

enum class InitScheme { HeUniform, LecunUniform, Zeros, Ones };
std::string to_string(InitScheme s);

struct WeightEntry {
  Tensor value;
  InitScheme init = InitScheme::Zeros;
  bool trainable = true;
};

// Named parameters, ordered by name. Running statistics of batch-norm layers
// are stored as non-trainable entries.
class WeightStore {
 public:
  // Deterministic initialization: each tensor draws from a generator seeded
  // by (seed, name), so values do not depend on declaration order.
  static WeightStore initialize(const NetworkConfig& config, uint64_t seed);

  uint64_t init_seed() const { return init_seed_; }
  void set_init_seed(uint64_t s) { init_seed_ = s; }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const WeightEntry& entry(const std::string& name) const;
  const Tensor& at(const std::string& name) const { return entry(name).value; }
  Tensor& mutable_at(const std::string& name);
  void insert(const std::string& name, WeightEntry e);
  const std::map<std::string, WeightEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t parameter_count(bool trainable_only = true) const;

  bool identical(const WeightStore& o) const;
  bool same_structure(const WeightStore& o) const;
  // Throws ShapeError listing the first missing, extra or mis-shaped entry.
  void validate_against(const NetworkConfig& config) const;

 private:
  std::map<std::string, WeightEntry> entries_;
  uint64_t init_seed_ = 0;
};

// Resolves parameter names to tape variables during a forward pass.
class ParamSource {
 public:
  // Reads from an existing store.
  ParamSource(ad::Tape& tape, const WeightStore& weights);
  // Creates any missing entry in `weights` with its init scheme.
  static ParamSource declaring(ad::Tape& tape, WeightStore& weights);
  // Resolves names to caller-provided variables (gradient checking).
  ParamSource(ad::Tape& tape, const std::map<std::string, ad::Var>& bound);

  ad::Var get(const std::string& name, const Shape& shape, InitScheme init, bool trainable = true);
  ad::Tape& tape() { return tape_; }

 private:
  ParamSource(ad::Tape& tape) : tape_(tape) {}
  ad::Tape& tape_;
  const WeightStore* read_ = nullptr;
  WeightStore* declare_ = nullptr;
  const std::map<std::string, ad::Var>* bound_ = nullptr;
};

// ------------------------------------------------------------------- graph

struct CostVolume {
  Tensor values;  // [D,H/4,W/4]
  static constexpr int64_t kScaleDivisor = 4;
};

struct DisparityMap {
  Tensor values;  // [H,W], pixels at full resolution
  Tensor valid;   // [H,W], 1 for valid
};

struct GraphOutput {
  ad::Var disparity;          // [H,W]
  ad::Var disparity_quarter;  // [H/4,W/4], in quarter-resolution levels
  ad::Var left_features;      // [N_c,H/4,W/4]
  ad::Var cost;               // [D,H/4,W/4]
  ad::Var cost_aggregated;    // [D,H/4,W/4]
  ad::Var mask_logits;        // [144,H/4,W/4]
};

namespace graph {
ad::Var extract_features(ParamSource& ps, const ad::Var& image, const NetworkConfig& config);
ad::Var aggregate(ParamSource& ps, const ad::Var& cost, const NetworkConfig& config);
ad::Var soft_argmax(const ad::Var& cost_aggregated);
GraphOutput forward(ParamSource& ps, const ad::Var& left, const ad::Var& right, const NetworkConfig& config);
}  // namespace graph

// Maps an image in [0,1] to the network input range.
Tensor normalize_image(const Tensor& image);
void check_input_dims(const Tensor& image, const char* what);

// ------------------------------------------------------ tensor-level API

Tensor extract_features(const Tensor& image, const WeightStore& weights, const NetworkConfig& config);
CostVolume build_cost_volume(const Tensor& left_features, const Tensor& right_features, int64_t levels);
CostVolume aggregate(const CostVolume& cost, const WeightStore& weights, const NetworkConfig& config);
Tensor soft_argmax(const CostVolume& cost_aggregated);

struct ForwardResult {
  DisparityMap disparity;
  std::optional<Tensor> left_features;
};
ForwardResult forward(const Tensor& left, const Tensor& right, const WeightStore& weights,
                      const NetworkConfig& config, bool return_features = false);

}  // namespace las
