#include "las/network.hpp"

#include <cmath>
#include <limits>

#include "las/kernels.hpp"
#include "las/macs.hpp"
#include "las/rng.hpp"
#include "las/stereo_kernels.hpp"

namespace las {

// ------------------------------------------------------------------ config

std::string to_string(AggVariant v) {
  switch (v) {
    case AggVariant::TwoDOnly: return "two-d-only";
    case AggVariant::Bilateral: return "bilateral";
    case AggVariant::TwoDThenThreeD: return "two-d-then-three-d";
    case AggVariant::ThreeDThenTwoD: return "three-d-then-two-d";
    case AggVariant::Interleaved: return "interleaved";
  }
  return "?";
}

AggVariant agg_variant_from_string(const std::string& s) {
  for (AggVariant v : {AggVariant::TwoDOnly, AggVariant::Bilateral, AggVariant::TwoDThenThreeD,
                       AggVariant::ThreeDThenTwoD, AggVariant::Interleaved})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown aggregation variant '" + s + "'");
}

std::string to_string(SizePreset p) {
  switch (p) {
    case SizePreset::Micro: return "micro";
    case SizePreset::PaperLike: return "paper-like";
    case SizePreset::Custom: return "custom";
  }
  return "?";
}

NetworkConfig NetworkConfig::micro() {
  NetworkConfig c;
  c.preset = SizePreset::Micro;
  c.d_max = 64;
  c.stem_channels = 16;
  c.stages = {BackboneStage{24, 2, 4}, BackboneStage{32, 1, 4}, BackboneStage{48, 1, 4}, BackboneStage{64, 1, 4}};
  c.fused_channels = 48;
  c.two_d_channels = 48;
  c.two_d_layers = 3;
  c.head_channels = 32;
  c.reference_height = 64;
  c.reference_width = 128;
  return c;
}

NetworkConfig NetworkConfig::paper_like() {
  NetworkConfig c;
  c.preset = SizePreset::PaperLike;
  c.d_max = 192;
  c.stem_channels = 32;
  c.stages = {BackboneStage{24, 2, 6}, BackboneStage{32, 3, 6}, BackboneStage{96, 7, 6}, BackboneStage{160, 3, 6}};
  c.fused_channels = 96;
  c.two_d_channels = 160;
  c.two_d_layers = 3;
  c.head_channels = 48;
  c.reference_height = 384;
  c.reference_width = 1248;
  return c;
}

NetworkConfig NetworkConfig::preset_named(const std::string& name) {
  if (name == "micro") return micro();
  if (name == "paper-like") return paper_like();
  throw ConfigError("unknown size preset '" + name + "'");
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("network config: " + m); };
  if (d_max <= 0 || d_max % 4 != 0) fail("d_max must be a positive multiple of 4");
  if (!(three_d_proportion > 0.0 && three_d_proportion < 1.0)) fail("three_d_proportion must lie in (0,1)");
  if (stem_channels <= 0 || fused_channels <= 0 || two_d_channels <= 0 || head_channels <= 0)
    fail("channel counts must be positive");
  for (const auto& s : stages)
    if (s.channels <= 0 || s.blocks <= 0 || s.expansion <= 0) fail("backbone stages need positive entries");
  for (int64_t k : three_d_kernel)
    if (k <= 0 || k % 2 == 0) fail("three_d_kernel extents must be odd");
  if (two_d_kernel <= 0 || two_d_kernel % 2 == 0) fail("two_d_kernel must be odd");
  if (two_d_layers <= 0 || two_d_expansion <= 0) fail("two_d_layers and two_d_expansion must be positive");
  if (three_d_width < 0) fail("three_d_width must be >= 0");
  if (reference_height <= 0 || reference_width <= 0 || reference_height % 32 || reference_width % 32)
    fail("reference size must be positive multiples of 32");
}

namespace {

int64_t half_extent(int64_t n, int64_t k) { return (n + 2 * (k / 2) - k) / 2 + 1; }

int64_t g2d_block_macs(const NetworkConfig& c, int64_t layers, int64_t plane) {
  const int64_t d = c.levels(), ch = c.two_d_channels, hidden = ch * c.two_d_expansion;
  const int64_t k2 = c.two_d_kernel * c.two_d_kernel;
  return 2 * d * ch * plane + layers * (ch * k2 * plane + 2 * ch * hidden * plane);
}

int64_t kernel_volume(const NetworkConfig& c) {
  return c.three_d_kernel[0] * c.three_d_kernel[1] * c.three_d_kernel[2];
}

int64_t g3d_macs(const NetworkConfig& c, int64_t width, int64_t h4, int64_t w4) {
  const int64_t d = c.levels(), kv = kernel_volume(c), vol = d * h4 * w4;
  const int64_t vol2 = half_extent(d, c.three_d_kernel[0]) * half_extent(h4, c.three_d_kernel[1]) *
                       half_extent(w4, c.three_d_kernel[2]);
  return width * vol * (kv + width + 1) + 2 * width * width * kv * vol2;
}

int64_t thin_width_for(const NetworkConfig& c, int64_t width) {
  const int64_t h4 = c.reference_height / 4, w4 = c.reference_width / 4;
  const double per_unit = 2.0 * c.two_d_layers * kernel_volume(c) * c.levels() * h4 * w4;
  return std::max<int64_t>(1, std::llround(static_cast<double>(g3d_macs(c, width, h4, w4)) / per_unit));
}

}  // namespace

AggregationMacs aggregation_macs_for_width(const NetworkConfig& c, int64_t width, int64_t h4, int64_t w4) {
  const int64_t plane = h4 * w4;
  AggregationMacs m;
  switch (c.agg_variant) {
    case AggVariant::TwoDOnly:
      m.two_d = g2d_block_macs(c, c.two_d_layers, plane);
      break;
    case AggVariant::Bilateral:
    case AggVariant::TwoDThenThreeD:
    case AggVariant::ThreeDThenTwoD:
      m.two_d = g2d_block_macs(c, c.two_d_layers, plane);
      m.three_d = g3d_macs(c, width, h4, w4);
      break;
    case AggVariant::Interleaved: {
      const int64_t thin = thin_width_for(c, width);
      m.two_d = c.two_d_layers * g2d_block_macs(c, 1, plane);
      m.three_d = c.two_d_layers * 2 * thin * kernel_volume(c) * c.levels() * plane;
      break;
    }
  }
  return m;
}

AggregationMacs aggregation_macs(const NetworkConfig& c, int64_t h4, int64_t w4) {
  return aggregation_macs_for_width(c, c.resolved_three_d_width(), h4, w4);
}

int64_t NetworkConfig::resolved_three_d_width() const {
  if (three_d_width > 0) return three_d_width;
  NetworkConfig probe = *this;
  probe.agg_variant = AggVariant::ThreeDThenTwoD;
  const int64_t h4 = reference_height / 4, w4 = reference_width / 4;
  int64_t best = 1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int64_t w = 1; w <= 64; ++w) {
    const double err = std::abs(aggregation_macs_for_width(probe, w, h4, w4).three_d_fraction() - three_d_proportion);
    if (err < best_err) {
      best_err = err;
      best = w;
    }
  }
  return best;
}

int64_t NetworkConfig::interleaved_three_d_width() const { return thin_width_for(*this, resolved_three_d_width()); }

// ----------------------------------------------------------------- weights

std::string to_string(InitScheme s) {
  switch (s) {
    case InitScheme::HeUniform: return "he-uniform";
    case InitScheme::LecunUniform: return "lecun-uniform";
    case InitScheme::Zeros: return "zeros";
    case InitScheme::Ones: return "ones";
  }
  return "?";
}

namespace {

Tensor make_initial(const std::string& name, const Shape& shape, InitScheme init, uint64_t seed) {
  switch (init) {
    case InitScheme::Zeros: return Tensor::zeros(shape);
    case InitScheme::Ones: return Tensor::ones(shape);
    case InitScheme::HeUniform:
    case InitScheme::LecunUniform: {
      int64_t fan_in = 1;
      for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double bound = std::sqrt((init == InitScheme::HeUniform ? 6.0 : 3.0) / static_cast<double>(fan_in));
      SplitMix64 rng(mix_seed(seed, hash_name(name)));
      Tensor t(shape);
      for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
      return t;
    }
  }
  throw Error("unknown init scheme");
}

}  // namespace

WeightStore WeightStore::initialize(const NetworkConfig& config, uint64_t seed) {
  config.validate();
  WeightStore store;
  store.init_seed_ = seed;
  // Run the graph once on a minimal input in shapes-only mode; every
  // parameter it touches is created on first use.
  MacsLedger scratch;
  MacsScope scope(scratch, true);
  ad::Tape tape(false);
  ParamSource ps = ParamSource::declaring(tape, store);
  Tensor image({3, 32, 32}, 0.5f);
  graph::forward(ps, tape.constant(image), tape.constant(image), config);
  return store;
}

const WeightEntry& WeightStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("weight store has no tensor named '" + name + "'");
  return it->second;
}

Tensor& WeightStore::mutable_at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("weight store has no tensor named '" + name + "'");
  return it->second.value;
}

void WeightStore::insert(const std::string& name, WeightEntry e) {
  if (name.empty()) throw Error("weight names must be non-empty");
  entries_[name] = std::move(e);
}

int64_t WeightStore::parameter_count(bool trainable_only) const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_)
    if (e.trainable || !trainable_only) n += e.value.numel();
  return n;
}

bool WeightStore::identical(const WeightStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (auto a = entries_.begin(), b = o.entries_.begin(); a != entries_.end(); ++a, ++b)
    if (a->first != b->first || !a->second.value.identical(b->second.value)) return false;
  return true;
}

bool WeightStore::same_structure(const WeightStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (auto a = entries_.begin(), b = o.entries_.begin(); a != entries_.end(); ++a, ++b)
    if (a->first != b->first || a->second.value.shape() != b->second.value.shape() ||
        a->second.trainable != b->second.trainable)
      return false;
  return true;
}

void WeightStore::validate_against(const NetworkConfig& config) const {
  config.validate();
  WeightStore expected;
  {
    MacsLedger scratch;
    MacsScope scope(scratch, true);
    ad::Tape tape(false);
    ParamSource ps = ParamSource::declaring(tape, expected);
    Tensor image({3, 32, 32}, 0.5f);
    graph::forward(ps, tape.constant(image), tape.constant(image), config);
  }
  for (const auto& [name, e] : expected.entries_) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ShapeError("weights: missing tensor '" + name + "'");
    if (it->second.value.shape() != e.value.shape())
      throw ShapeError("weights: tensor '" + name + "' has shape " + shape_str(it->second.value.shape()) +
                       ", config expects " + shape_str(e.value.shape()));
  }
  for (const auto& [name, e] : entries_)
    if (!expected.entries_.count(name)) throw ShapeError("weights: unexpected tensor '" + name + "'");
}

ParamSource::ParamSource(ad::Tape& tape, const WeightStore& weights) : tape_(tape), read_(&weights) {}

ParamSource ParamSource::declaring(ad::Tape& tape, WeightStore& weights) {
  ParamSource ps(tape);
  ps.declare_ = &weights;
  return ps;
}

ParamSource::ParamSource(ad::Tape& tape, const std::map<std::string, ad::Var>& bound) : tape_(tape), bound_(&bound) {}

ad::Var ParamSource::get(const std::string& name, const Shape& shape, InitScheme init, bool trainable) {
  const std::string what = "parameter " + name;
  if (bound_) {
    auto it = bound_->find(name);
    if (it == bound_->end()) throw Error("no variable bound for parameter '" + name + "'");
    require_shape(it->second.value(), shape, what.c_str());
    return it->second;
  }
  if (declare_ && !declare_->contains(name))
    declare_->insert(name, WeightEntry{make_initial(name, shape, init, declare_->init_seed()), init, trainable});
  const WeightStore& store = declare_ ? *declare_ : *read_;
  const WeightEntry& e = store.entry(name);
  require_shape(e.value, shape, what.c_str());
  return tape_.param(name, e.value, e.trainable);
}

// ------------------------------------------------------------------- graph

namespace {

struct ConvSpec {
  int64_t out = 0;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t groups = 1;
  bool bias = true;
  InitScheme init = InitScheme::HeUniform;
};

ad::Var conv(ParamSource& ps, const ad::Var& x, const std::string& name, const ConvSpec& s) {
  const int64_t cin = x.shape()[0];
  ad::Var w = ps.get(name + ".weight", {s.out, cin / s.groups, s.kernel, s.kernel}, s.init);
  Conv2dOptions opt;
  opt.stride = {s.stride, s.stride};
  opt.padding = {s.kernel / 2, s.kernel / 2};
  opt.groups = s.groups;
  if (!s.bias) return ad::conv2d(x, w, nullptr, opt);
  ad::Var b = ps.get(name + ".bias", {s.out}, InitScheme::Zeros);
  return ad::conv2d(x, w, &b, opt);
}

ad::Var batch_norm(ParamSource& ps, const ad::Var& x, const std::string& name) {
  const Shape ch{x.shape()[0]};
  ad::Var scale = ps.get(name + ".scale", ch, InitScheme::Ones);
  ad::Var shift = ps.get(name + ".shift", ch, InitScheme::Zeros);
  ad::Var mean = ps.get(name + ".running_mean", ch, InitScheme::Zeros, false);
  ad::Var var = ps.get(name + ".running_var", ch, InitScheme::Ones, false);
  return ad::normalize(x, NormKind::BatchNormInference, scale, shift, &mean, &var);
}

// conv (no bias) -> batch norm -> optional relu6
ad::Var conv_bn(ParamSource& ps, const ad::Var& x, const std::string& name, ConvSpec s, bool relu) {
  s.bias = false;
  ad::Var y = batch_norm(ps, conv(ps, x, name + ".conv", s), name + ".bn");
  return relu ? ad::activation(y, ActKind::Relu6) : y;
}

ad::Var inverted_residual(ParamSource& ps, const ad::Var& x, const std::string& name, int64_t out, int64_t stride,
                          int64_t expansion) {
  const int64_t cin = x.shape()[0], hidden = cin * expansion;
  ad::Var h = x;
  if (expansion != 1) h = conv_bn(ps, h, name + ".expand", {.out = hidden}, true);
  h = conv_bn(ps, h, name + ".dw", {.out = hidden, .kernel = 3, .stride = stride, .groups = hidden}, true);
  h = conv_bn(ps, h, name + ".project", {.out = out, .init = InitScheme::LecunUniform}, false);
  if (stride == 1 && cin == out) h = ad::add(h, x);
  return h;
}

ad::Var g2d(ParamSource& ps, const ad::Var& x, const std::string& name, const NetworkConfig& c, int64_t layers) {
  MacsSection section("g2d");
  const int64_t ch = c.two_d_channels, levels = x.shape()[0];
  ad::Var h = conv(ps, x, name + ".proj_in", {.out = ch, .init = InitScheme::LecunUniform});
  for (int64_t l = 0; l < layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    ad::Var t = conv(ps, h, p + ".dw", {.out = ch, .kernel = c.two_d_kernel, .groups = ch});
    ad::Var scale = ps.get(p + ".ln.scale", {ch}, InitScheme::Ones);
    ad::Var shift = ps.get(p + ".ln.shift", {ch}, InitScheme::Zeros);
    t = ad::normalize(t, NormKind::LayerNorm, scale, shift);
    t = conv(ps, t, p + ".pw1", {.out = ch * c.two_d_expansion});
    t = ad::activation(t, ActKind::Gelu);
    t = conv(ps, t, p + ".pw2", {.out = ch, .init = InitScheme::LecunUniform});
    h = ad::add(h, t);
  }
  return conv(ps, h, name + ".proj_out", {.out = levels, .init = InitScheme::LecunUniform});
}

ad::Var conv3(ParamSource& ps, const ad::Var& x, const std::string& name, int64_t out,
              const std::array<int64_t, 3>& kernel, int64_t stride, InitScheme init = InitScheme::HeUniform) {
  const int64_t cin = x.shape()[0];
  ad::Var w = ps.get(name + ".weight", {out, cin, kernel[0], kernel[1], kernel[2]}, init);
  ad::Var b = ps.get(name + ".bias", {out}, InitScheme::Zeros);
  Conv3dOptions opt;
  opt.stride = {stride, stride, stride};
  opt.padding = {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
  return ad::conv3d(x, w, &b, opt);
}

// Two-level 3D encoder-decoder over (disparity, height, width).
ad::Var g3d(ParamSource& ps, const ad::Var& x, const std::string& name, const NetworkConfig& c) {
  MacsSection section("g3d");
  const Shape s = x.shape();
  const int64_t width = c.resolved_three_d_width();
  const std::array<int64_t, 3> point{1, 1, 1};
  ad::Var v = ad::reshape(x, {1, s[0], s[1], s[2]});
  ad::Var lift = ad::activation(conv3(ps, v, name + ".lift", width, c.three_d_kernel, 1), ActKind::Relu6);
  ad::Var down = ad::activation(conv3(ps, lift, name + ".down", width, c.three_d_kernel, 2), ActKind::Relu6);
  ad::Var mid = ad::activation(conv3(ps, down, name + ".mid", width, c.three_d_kernel, 1), ActKind::Relu6);
  ad::Var up = mid;
  for (int axis = 1; axis <= 3; ++axis) up = ad::linear_resize_axis(up, axis, s[static_cast<size_t>(axis - 1)], false);
  up = conv3(ps, up, name + ".up", width, point, 1);
  ad::Var merged = ad::activation(ad::add(up, lift), ActKind::Relu6);
  ad::Var out = conv3(ps, merged, name + ".out", 1, point, 1, InitScheme::LecunUniform);
  return ad::reshape(out, s);
}

ad::Var thin3d(ParamSource& ps, const ad::Var& x, const std::string& name, const NetworkConfig& c) {
  MacsSection section("g3d");
  const Shape s = x.shape();
  ad::Var v = ad::reshape(x, {1, s[0], s[1], s[2]});
  ad::Var h = ad::activation(conv3(ps, v, name + ".lift", c.interleaved_three_d_width(), c.three_d_kernel, 1),
                             ActKind::Relu6);
  ad::Var out = conv3(ps, h, name + ".out", 1, c.three_d_kernel, 1, InitScheme::LecunUniform);
  return ad::reshape(out, s);
}

}  // namespace

void check_input_dims(const Tensor& image, const char* what) {
  require_rank(image, 3, what);
  if (image.dim(0) != 3) throw ShapeError(std::string(what) + ": expected 3 channels, got " + shape_str(image.shape()));
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
    throw ShapeError(std::string(what) + ": height and width must be divisible by 32, got " + shape_str(image.shape()));
}

Tensor normalize_image(const Tensor& image) {
  Tensor out(image.shape());
  for (int64_t i = 0; i < image.numel(); ++i) out[i] = 2.0f * image[i] - 1.0f;
  return out;
}

namespace graph {

ad::Var extract_features(ParamSource& ps, const ad::Var& image, const NetworkConfig& c) {
  check_input_dims(image.value(), "extract_features");
  ad::Tape& tape = ps.tape();
  std::array<ad::Var, 4> pyramid;
  {
    MacsSection section("backbone");
    ad::Var x = ad::sub(ad::scale(image, 2.0f), tape.constant(Tensor::ones(image.shape())));
    x = conv_bn(ps, x, "backbone.stem", {.out = c.stem_channels, .kernel = 3, .stride = 2}, true);
    for (size_t s = 0; s < c.stages.size(); ++s) {
      const BackboneStage& st = c.stages[s];
      for (int64_t b = 0; b < st.blocks; ++b) {
        const std::string name = "backbone.s" + std::to_string(s) + ".b" + std::to_string(b);
        x = inverted_residual(ps, x, name, st.channels, b == 0 ? 2 : 1, st.expansion);
      }
      pyramid[s] = x;
    }
  }
  MacsSection section("fusion");
  const int64_t h4 = pyramid[0].shape()[1], w4 = pyramid[0].shape()[2];
  std::vector<ad::Var> parts{pyramid[0]};
  for (size_t s = 1; s < pyramid.size(); ++s) parts.push_back(ad::bilinear_resize(pyramid[s], h4, w4, false));
  ad::Var y = conv(ps, ad::concat0(parts), "fuse.proj", {.out = c.fused_channels, .init = InitScheme::LecunUniform});
  ad::Var r = ad::activation(y, ActKind::Relu6);
  r = conv_bn(ps, r, "fuse.res", {.out = c.fused_channels, .kernel = 3, .init = InitScheme::LecunUniform}, false);
  return ad::add(y, r);
}

ad::Var aggregate(ParamSource& ps, const ad::Var& cost, const NetworkConfig& c) {
  MacsSection section("aggregation");
  switch (c.agg_variant) {
    case AggVariant::TwoDOnly: return g2d(ps, cost, "agg.g2d", c, c.two_d_layers);
    case AggVariant::Bilateral:
      return ad::add(g2d(ps, cost, "agg.g2d", c, c.two_d_layers), g3d(ps, cost, "agg.g3d", c));
    case AggVariant::TwoDThenThreeD: return g3d(ps, g2d(ps, cost, "agg.g2d", c, c.two_d_layers), "agg.g3d", c);
    case AggVariant::ThreeDThenTwoD: return g2d(ps, g3d(ps, cost, "agg.g3d", c), "agg.g2d", c, c.two_d_layers);
    case AggVariant::Interleaved: {
      ad::Var x = cost;
      for (int64_t l = 0; l < c.two_d_layers; ++l) {
        const std::string p = "agg.il" + std::to_string(l);
        x = g2d(ps, x, p + ".g2d", c, 1);
        x = thin3d(ps, x, p + ".g3d", c);
      }
      return x;
    }
  }
  throw ConfigError("unknown aggregation variant");
}

ad::Var soft_argmax(const ad::Var& cost_aggregated) {
  MacsSection section("soft_argmax");
  return ad::disparity_expectation(ad::softmax_axis(cost_aggregated, 0));
}

GraphOutput forward(ParamSource& ps, const ad::Var& left, const ad::Var& right, const NetworkConfig& c) {
  c.validate();
  check_input_dims(left.value(), "forward(left)");
  require_shape(right.value(), left.shape(), "forward(right)");
  GraphOutput out;
  out.left_features = extract_features(ps, left, c);
  ad::Var right_features = extract_features(ps, right, c);
  {
    MacsSection section("cost_volume");
    out.cost = ad::correlation_volume(out.left_features, right_features, c.levels());
  }
  out.cost_aggregated = aggregate(ps, out.cost, c);
  out.disparity_quarter = soft_argmax(out.cost_aggregated);
  {
    MacsSection section("mask_head");
    ad::Var h = ad::concat0({out.cost_aggregated, out.left_features});
    h = ad::activation(conv(ps, h, "head.conv1", {.out = c.head_channels, .kernel = 3}), ActKind::Relu6);
    out.mask_logits = conv(ps, h, "head.conv2",
                           {.out = kUpsampleFactor * kUpsampleFactor * kConvexTaps, .init = InitScheme::LecunUniform});
  }
  MacsSection section("upsample");
  out.disparity = ad::convex_upsample(out.disparity_quarter, out.mask_logits);
  return out;
}

}  // namespace graph

// -------------------------------------------------------- tensor-level API

Tensor extract_features(const Tensor& image, const WeightStore& weights, const NetworkConfig& config) {
  ad::Tape tape(false);
  ParamSource ps(tape, weights);
  return graph::extract_features(ps, tape.constant(image), config).value();
}

CostVolume build_cost_volume(const Tensor& left_features, const Tensor& right_features, int64_t levels) {
  if (levels <= 0) throw ShapeError("build_cost_volume: levels must be positive");
  MacsSection section("cost_volume");
  return CostVolume{correlation_volume(left_features, right_features, levels)};
}

CostVolume aggregate(const CostVolume& cost, const WeightStore& weights, const NetworkConfig& config) {
  config.validate();
  require_rank(cost.values, 3, "aggregate");
  if (cost.values.dim(0) != config.levels())
    throw ShapeError("aggregate: cost volume has " + std::to_string(cost.values.dim(0)) + " levels, config expects " +
                     std::to_string(config.levels()));
  ad::Tape tape(false);
  ParamSource ps(tape, weights);
  return CostVolume{graph::aggregate(ps, tape.constant(cost.values), config).value()};
}

Tensor soft_argmax(const CostVolume& cost_aggregated) {
  require_rank(cost_aggregated.values, 3, "soft_argmax");
  MacsSection section("soft_argmax");
  return disparity_expectation(softmax_axis(cost_aggregated.values, 0));
}

ForwardResult forward(const Tensor& left, const Tensor& right, const WeightStore& weights, const NetworkConfig& config,
                      bool return_features) {
  ad::Tape tape(false);
  ParamSource ps(tape, weights);
  GraphOutput g = graph::forward(ps, tape.constant(left), tape.constant(right), config);
  ForwardResult r;
  r.disparity.values = g.disparity.value();
  r.disparity.valid = Tensor::ones(r.disparity.values.shape());
  if (return_features) r.left_features = g.left_features.value();
  return r;
}

}  // namespace las
