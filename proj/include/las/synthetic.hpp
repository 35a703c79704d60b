#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "las/tensor.hpp"

namespace las {

enum class Provenance { SyntheticLabeled, PseudoLabeled };

struct StereoSample {
  Tensor left;      // [3,H,W] in [0,1]
  Tensor right;     // [3,H,W] in [0,1]
  Tensor gt;        // [H,W] disparity in pixels, left-image geometry
  Tensor valid;     // [H,W] 1 where gt is usable
  Tensor occluded;  // [H,W] 1 where the left pixel has no right correspondence
  Provenance provenance = Provenance::SyntheticLabeled;
  uint64_t id = 0;

  int64_t height() const { return left.dim(1); }
  int64_t width() const { return left.dim(2); }
};

// Throws ShapeError/Error when shapes disagree or gt is negative or
// non-finite at a valid pixel.
void check_sample(const StereoSample& s);

enum class Texture { Noise, Gradient, Checker };
std::string to_string(Texture t);
Texture texture_from_string(const std::string& s);

struct SceneSpec {
  int64_t count = 1;
  int64_t height = 64;
  int64_t width = 128;
  double disparity_min = 4.0;
  double disparity_max = 40.0;
  Texture texture = Texture::Noise;
  int64_t object_count = 3;
  uint64_t seed = 0;

  // Throws ConfigError for an infeasible spec.
  void validate() const;
};

// One fronto-parallel layer: a rectangle or ellipse carrying a procedural
// texture that moves with the layer, so any real-valued disparity renders
// exactly in both views.
struct SceneLayer {
  enum class Outline { Frame, Rectangle, Ellipse };
  Outline outline = Outline::Frame;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  double disparity = 0;
  Texture texture = Texture::Noise;
  uint64_t texture_seed = 0;
  double base[3] = {0.5, 0.5, 0.5};
  double amplitude = 0.5;
  double cell = 4.0;
  double dir_x = 1.0, dir_y = 0.0;  // unit gradient direction

  bool covers(double x, double y) const;
  double color(int channel, double x, double y) const;
};

// Layers sorted far to near (ascending disparity); layer 0 fills the frame.
struct Scene {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<SceneLayer> layers;
};

Scene sample_scene(const SceneSpec& spec, uint64_t index);
// Painter's algorithm in each view. gt is the disparity of the nearest layer
// at each left pixel; valid is 0 where the match falls left of the right
// image; occluded marks left pixels whose layer is hidden in the right view.
StereoSample render_scene(const Scene& scene, uint64_t id);

StereoSample generate_sample(const SceneSpec& spec, uint64_t index);
std::vector<StereoSample> gen_synthetic_dataset(const SceneSpec& spec);

}  // namespace las
