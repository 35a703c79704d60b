#include "las/stereo_kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "las/macs.hpp"

namespace las {

Tensor correlation_volume(const Tensor& left, const Tensor& right, int64_t levels) {
  require_rank(left, 3, "correlation_volume left");
  require_shape(right, left.shape(), "correlation_volume right");
  if (levels <= 0) throw ShapeError("correlation_volume: levels must be positive");
  const int64_t c = left.dim(0), h = left.dim(1), w = left.dim(2);
  Tensor out(Shape{levels, h, w});
  int64_t count = 0;
  for (int64_t d = 0; d < std::min(levels, w); ++d) count += c * h * (w - d);
  macs::report("correlation", count);
  if (macs::shapes_only()) return out;
  const float inv = 1.0f / static_cast<float>(c);
  const int64_t plane = h * w;
  for (int64_t d = 0; d < levels; ++d) {
    float* o = out.ptr() + d * plane;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* l = left.ptr() + ch * plane;
      const float* r = right.ptr() + ch * plane;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = d; x < w; ++x) o[y * w + x] += l[y * w + x] * r[y * w + x - d];
    }
    for (int64_t i = 0; i < plane; ++i) o[i] *= inv;
  }
  require_finite(out, "correlation_volume");
  return out;
}

CorrelationGrads correlation_volume_backward(const Tensor& left, const Tensor& right, const Tensor& g) {
  require_rank(left, 3, "correlation_volume_backward");
  require_shape(right, left.shape(), "correlation_volume_backward right");
  const int64_t c = left.dim(0), h = left.dim(1), w = left.dim(2);
  require_rank(g, 3, "correlation_volume_backward grad");
  if (g.dim(1) != h || g.dim(2) != w) throw ShapeError("correlation_volume_backward: grad shape mismatch");
  const int64_t levels = g.dim(0);
  CorrelationGrads out{Tensor(left.shape()), Tensor(right.shape())};
  const float inv = 1.0f / static_cast<float>(c);
  const int64_t plane = h * w;
  for (int64_t d = 0; d < levels; ++d) {
    const float* go = g.ptr() + d * plane;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* l = left.ptr() + ch * plane;
      const float* r = right.ptr() + ch * plane;
      float* gl = out.left.ptr() + ch * plane;
      float* gr = out.right.ptr() + ch * plane;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = d; x < w; ++x) {
          const float gv = go[y * w + x] * inv;
          gl[y * w + x] += gv * r[y * w + x - d];
          gr[y * w + x - d] += gv * l[y * w + x];
        }
      }
    }
  }
  return out;
}

Tensor disparity_expectation(const Tensor& prob) {
  require_rank(prob, 3, "disparity_expectation");
  const int64_t levels = prob.dim(0), plane = prob.dim(1) * prob.dim(2);
  Tensor out(Shape{prob.dim(1), prob.dim(2)});
  macs::report("soft_argmax", levels * plane);
  for (int64_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (int64_t d = 1; d < levels; ++d) s += static_cast<double>(d) * prob[d * plane + i];
    out[i] = static_cast<float>(s);
  }
  require_finite(out, "disparity_expectation");
  return out;
}

Tensor disparity_expectation_backward(const Shape& prob_shape, const Tensor& g) {
  if (prob_shape.size() != 3) throw ShapeError("disparity_expectation_backward: rank-3 shape expected");
  require_shape(g, Shape{prob_shape[1], prob_shape[2]}, "disparity_expectation_backward grad");
  Tensor out(prob_shape);
  const int64_t plane = prob_shape[1] * prob_shape[2];
  for (int64_t d = 0; d < prob_shape[0]; ++d)
    for (int64_t i = 0; i < plane; ++i) out[d * plane + i] = static_cast<float>(d) * g[i];
  return out;
}

namespace {

struct ConvexSite {
  std::array<int64_t, kConvexTaps> src;  // flat coarse index per tap
  std::array<double, kConvexTaps> p;     // convex weights
  double value;                          // sum_k p_k v_k
};

void check_convex_inputs(const Tensor& disp, const Tensor& mask, const char* op) {
  require_rank(disp, 2, op);
  require_shape(mask, Shape{kConvexTaps * kUpsampleFactor * kUpsampleFactor, disp.dim(0), disp.dim(1)}, op);
}

ConvexSite convex_site(const Tensor& disp, const Tensor& mask, int64_t y, int64_t x, int64_t sub) {
  const int64_t h = disp.dim(0), w = disp.dim(1), plane = h * w;
  const int64_t subs = kUpsampleFactor * kUpsampleFactor;
  ConvexSite s{};
  double mx = -INFINITY;
  std::array<double, kConvexTaps> logit{};
  for (int64_t k = 0; k < kConvexTaps; ++k) {
    logit[static_cast<size_t>(k)] = mask[(k * subs + sub) * plane + y * w + x];
    mx = std::max(mx, logit[static_cast<size_t>(k)]);
  }
  double sum = 0.0;
  for (int64_t k = 0; k < kConvexTaps; ++k) {
    const size_t kk = static_cast<size_t>(k);
    s.p[kk] = std::exp(logit[kk] - mx);
    sum += s.p[kk];
    const int64_t yy = std::clamp<int64_t>(y + k / 3 - 1, 0, h - 1);
    const int64_t xx = std::clamp<int64_t>(x + k % 3 - 1, 0, w - 1);
    s.src[kk] = yy * w + xx;
  }
  s.value = 0.0;
  for (size_t k = 0; k < kConvexTaps; ++k) {
    s.p[k] /= sum;
    s.value += s.p[k] * disp[s.src[k]];
  }
  return s;
}

}  // namespace

Tensor convex_upsample(const Tensor& disp, const Tensor& mask) {
  check_convex_inputs(disp, mask, "convex_upsample");
  const int64_t h = disp.dim(0), w = disp.dim(1), f = kUpsampleFactor;
  Tensor out(Shape{h * f, w * f});
  macs::report("convex_upsample", kConvexTaps * h * w * f * f);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t sub = 0; sub < f * f; ++sub) {
        const ConvexSite s = convex_site(disp, mask, y, x, sub);
        float lo = disp[s.src[0]], hi = lo;
        for (auto idx : s.src) {
          lo = std::min(lo, disp[idx]);
          hi = std::max(hi, disp[idx]);
        }
        // Rounding of the weighted sum must not leave the neighbourhood hull.
        const float v = std::clamp(static_cast<float>(s.value), lo, hi);
        out[(y * f + sub / f) * (w * f) + x * f + sub % f] = v * static_cast<float>(f);
      }
    }
  }
  require_finite(out, "convex_upsample");
  return out;
}

ConvexUpsampleGrads convex_upsample_backward(const Tensor& disp, const Tensor& mask, const Tensor& g) {
  check_convex_inputs(disp, mask, "convex_upsample_backward");
  const int64_t h = disp.dim(0), w = disp.dim(1), f = kUpsampleFactor, plane = h * w;
  require_shape(g, Shape{h * f, w * f}, "convex_upsample_backward grad");
  ConvexUpsampleGrads out{Tensor(disp.shape()), Tensor(mask.shape())};
  std::vector<double> gdisp(static_cast<size_t>(plane), 0.0);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t sub = 0; sub < f * f; ++sub) {
        const ConvexSite s = convex_site(disp, mask, y, x, sub);
        const double gv = static_cast<double>(g[(y * f + sub / f) * (w * f) + x * f + sub % f]) * f;
        for (size_t k = 0; k < kConvexTaps; ++k) {
          gdisp[static_cast<size_t>(s.src[k])] += gv * s.p[k];
          const int64_t mi = (static_cast<int64_t>(k) * f * f + sub) * plane + y * w + x;
          out.mask[mi] = static_cast<float>(gv * s.p[k] * (disp[s.src[k]] - s.value));
        }
      }
    }
  }
  for (int64_t i = 0; i < plane; ++i) out.disp[i] = static_cast<float>(gdisp[static_cast<size_t>(i)]);
  return out;
}

}  // namespace las
