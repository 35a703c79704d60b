#include "las/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "las/rng.hpp"

namespace las {

void check_sample(const StereoSample& s) {
  if (s.left.rank() != 3 || s.left.dim(0) != 3) throw ShapeError("sample: left must be [3,H,W], got " + shape_str(s.left.shape()));
  if (!s.right.same_shape(s.left)) throw ShapeError("sample: right " + shape_str(s.right.shape()) + " != left");
  const Shape plane{s.left.dim(1), s.left.dim(2)};
  if (s.gt.shape() != plane || s.valid.shape() != plane)
    throw ShapeError("sample: gt and valid must be " + shape_str(plane));
  if (!s.occluded.empty() && s.occluded.shape() != plane) throw ShapeError("sample: occluded must be " + shape_str(plane));
  for (int64_t i = 0; i < s.gt.numel(); ++i)
    if (s.valid[i] > 0.5f && !(std::isfinite(s.gt[i]) && s.gt[i] >= 0.0f))
      throw Error("sample " + std::to_string(s.id) + ": invalid gt value at valid pixel " + std::to_string(i));
}

std::string to_string(Texture t) {
  switch (t) {
    case Texture::Noise: return "noise";
    case Texture::Gradient: return "gradient";
    case Texture::Checker: return "checker";
  }
  return "?";
}

Texture texture_from_string(const std::string& s) {
  for (Texture t : {Texture::Noise, Texture::Gradient, Texture::Checker})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown texture '" + s + "'");
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("scene spec: " + m); };
  if (count <= 0) fail("count must be positive");
  if (height <= 0 || width <= 0 || height % 32 || width % 32) fail("size must be positive multiples of 32");
  if (!(disparity_min >= 0.0 && disparity_min <= disparity_max)) fail("need 0 <= disparity_min <= disparity_max");
  if (disparity_max >= static_cast<double>(width)) fail("disparity_max must be below the image width");
  if (object_count < 0) fail("object_count must be >= 0");
}

namespace {

double lattice(uint64_t seed, int64_t i, int64_t j) {
  uint64_t h = mix_seed(seed, static_cast<uint64_t>(i) * 0x9E3779B97F4A7C15ULL ^ static_cast<uint64_t>(j));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(uint64_t seed, double x, double y, double cell) {
  const double u = x / cell, v = y / cell;
  const double fu = std::floor(u), fv = std::floor(v);
  const auto i = static_cast<int64_t>(fu), j = static_cast<int64_t>(fv);
  const double a = u - fu, b = v - fv;
  const double top = lattice(seed, i, j) * (1 - a) + lattice(seed, i + 1, j) * a;
  const double bottom = lattice(seed, i, j + 1) * (1 - a) + lattice(seed, i + 1, j + 1) * a;
  return top * (1 - b) + bottom * b;
}

}  // namespace

bool SceneLayer::covers(double x, double y) const {
  switch (outline) {
    case Outline::Frame: return true;
    case Outline::Rectangle: return std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
    case Outline::Ellipse: {
      const double u = (x - cx) / rx, v = (y - cy) / ry;
      return u * u + v * v <= 1.0;
    }
  }
  return false;
}

double SceneLayer::color(int channel, double x, double y) const {
  const uint64_t s = mix_seed(texture_seed, static_cast<uint64_t>(channel));
  double t = 0.0;
  switch (texture) {
    case Texture::Noise:
      t = 0.5 * value_noise(s, x, y, 2 * cell) + 0.3 * value_noise(s + 1, x, y, cell) +
          0.2 * value_noise(s + 2, x, y, 0.5 * cell) - 0.5;
      break;
    case Texture::Gradient:
      t = std::clamp((x * dir_x + y * dir_y) / 64.0, -1.0, 1.0) * 0.45 + 0.1 * (value_noise(s, x, y, cell) - 0.5);
      break;
    case Texture::Checker: {
      const auto i = static_cast<int64_t>(std::floor(x / cell)), j = static_cast<int64_t>(std::floor(y / cell));
      t = ((i + j) & 1) ? 0.5 : -0.5;
      break;
    }
  }
  return std::clamp(base[channel] + amplitude * t, 0.0, 1.0);
}

Scene sample_scene(const SceneSpec& spec, uint64_t index) {
  spec.validate();
  SplitMix64 rng(mix_seed(spec.seed, index));
  const auto h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  std::vector<double> disparities(static_cast<size_t>(spec.object_count + 1));
  for (double& d : disparities) d = rng.uniform(spec.disparity_min, spec.disparity_max);
  std::sort(disparities.begin(), disparities.end());

  Scene scene{spec.height, spec.width, {}};
  for (size_t k = 0; k < disparities.size(); ++k) {
    SceneLayer l;
    if (k > 0) {
      l.outline = rng.uniform() < 0.5 ? SceneLayer::Outline::Rectangle : SceneLayer::Outline::Ellipse;
      l.cx = rng.uniform(0.0, w);
      l.cy = rng.uniform(0.0, h);
      l.rx = rng.uniform(0.08, 0.3) * w;
      l.ry = rng.uniform(0.15, 0.45) * h;
    }
    l.disparity = disparities[k];
    l.texture = spec.texture;
    l.texture_seed = rng.next();
    for (double& c : l.base) c = rng.uniform(0.2, 0.8);
    l.amplitude = rng.uniform(0.4, 0.8);
    l.cell = rng.uniform(2.0, 6.0);
    double dx, dy, n;
    do {
      dx = rng.uniform(-1.0, 1.0);
      dy = rng.uniform(-1.0, 1.0);
      n = std::sqrt(dx * dx + dy * dy);
    } while (n < 1e-3 || n > 1.0);
    l.dir_x = dx / n;
    l.dir_y = dy / n;
    scene.layers.push_back(l);
  }
  return scene;
}

namespace {

// Index of the nearest layer covering left-view point (x, y), or of the one
// covering right-view point (x, y) when `right` is set.
size_t top_layer(const Scene& scene, double x, double y, bool right) {
  for (size_t k = scene.layers.size(); k-- > 1;) {
    const SceneLayer& l = scene.layers[k];
    if (l.covers(right ? x + l.disparity : x, y)) return k;
  }
  return 0;
}

// 8-bit levels, as a camera would deliver; PNG storage is then lossless.
float quantize(double v) { return static_cast<float>(std::lround(v * 255.0)) / 255.0f; }

}  // namespace

StereoSample render_scene(const Scene& scene, uint64_t id) {
  if (scene.layers.empty() || scene.layers[0].outline != SceneLayer::Outline::Frame)
    throw Error("render_scene: layer 0 must fill the frame");
  const int64_t h = scene.height, w = scene.width;
  StereoSample s;
  s.left = Tensor({3, h, w});
  s.right = Tensor({3, h, w});
  s.gt = Tensor({h, w});
  s.valid = Tensor({h, w});
  s.occluded = Tensor({h, w});
  s.id = id;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const auto fx = static_cast<double>(x), fy = static_cast<double>(y);
      const SceneLayer& l = scene.layers[top_layer(scene, fx, fy, false)];
      const SceneLayer& r = scene.layers[top_layer(scene, fx, fy, true)];
      for (int c = 0; c < 3; ++c) {
        s.left[(c * h + y) * w + x] = quantize(l.color(c, fx, fy));
        s.right[(c * h + y) * w + x] = quantize(r.color(c, fx + r.disparity, fy));
      }
      s.gt[y * w + x] = static_cast<float>(l.disparity);
      const double xr = fx - l.disparity;
      s.valid[y * w + x] = xr >= 0.0 ? 1.0f : 0.0f;
      s.occluded[y * w + x] = &scene.layers[top_layer(scene, xr, fy, true)] != &l ? 1.0f : 0.0f;
    }
  return s;
}

StereoSample generate_sample(const SceneSpec& spec, uint64_t index) {
  return render_scene(sample_scene(spec, index), mix_seed(spec.seed, index));
}

std::vector<StereoSample> gen_synthetic_dataset(const SceneSpec& spec) {
  spec.validate();
  std::vector<StereoSample> out;
  out.reserve(static_cast<size_t>(spec.count));
  for (int64_t i = 0; i < spec.count; ++i) out.push_back(generate_sample(spec, static_cast<uint64_t>(i)));
  return out;
}

}  // namespace las
