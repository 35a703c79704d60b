#include <algorithm>
#include <cmath>
#include <string>

#include "las/kernels.hpp"
#include "las/macs.hpp"

namespace las {

namespace detail {
int& recording_depth() {
  thread_local int depth = 0;
  return depth;
}
}  // namespace detail

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

// outer x len x inner decomposition around `axis`.
void split_axis(const Shape& s, int axis, int64_t& outer, int64_t& len, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  len = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

void check_norm_params(const Tensor& input, NormKind kind, const NormParams& p) {
  if (input.rank() < 1) throw ShapeError("normalize: input must have a channel axis");
  const Shape ch{input.dim(0)};
  require_shape(p.scale, ch, "normalize scale");
  require_shape(p.shift, ch, "normalize shift");
  if (kind == NormKind::BatchNormInference) {
    require_shape(p.mean, ch, "normalize mean");
    require_shape(p.var, ch, "normalize var");
  }
  if (!(p.eps > 0.0f)) throw ShapeError("normalize: eps must be positive");
}

struct AxisTaps {
  std::vector<int64_t> i0, i1;
  std::vector<float> frac;
};

AxisTaps make_taps(int64_t in, int64_t out, bool align_corners) {
  AxisTaps t;
  t.i0.resize(static_cast<size_t>(out));
  t.i1.resize(static_cast<size_t>(out));
  t.frac.resize(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    double src;
    if (align_corners) {
      src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    } else {
      src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      if (src < 0.0) src = 0.0;
    }
    int64_t lo = std::min(static_cast<int64_t>(std::floor(src)), in - 1);
    int64_t hi = std::min(lo + 1, in - 1);
    t.i0[static_cast<size_t>(o)] = lo;
    t.i1[static_cast<size_t>(o)] = hi;
    t.frac[static_cast<size_t>(o)] = hi == lo ? 0.0f : static_cast<float>(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------- normalize

Tensor normalize(const Tensor& input, NormKind kind, const NormParams& p) {
  check_norm_params(input, kind, p);
  const int64_t c = input.dim(0);
  const int64_t sites = input.numel() / c;
  Tensor out(input.shape());
  const float* x = input.ptr();
  float* y = out.ptr();
  if (kind == NormKind::BatchNormInference) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float inv = 1.0f / std::sqrt(p.var[ch] + p.eps);
      const float a = p.scale[ch] * inv;
      const float m = p.mean[ch];
      const float b = p.shift[ch];
      for (int64_t s = 0; s < sites; ++s) y[ch * sites + s] = (x[ch * sites + s] - m) * a + b;
    }
  } else {
    for (int64_t s = 0; s < sites; ++s) {
      double mean = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) mean += x[ch * sites + s];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double dv = x[ch * sites + s] - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(c);
      const double rstd = 1.0 / std::sqrt(var + static_cast<double>(p.eps));
      for (int64_t ch = 0; ch < c; ++ch) {
        const double xhat = (x[ch * sites + s] - mean) * rstd;
        y[ch * sites + s] = static_cast<float>(xhat) * p.scale[ch] + p.shift[ch];
      }
    }
  }
  require_finite(out, "normalize");
  return out;
}

NormGrads normalize_backward(const Tensor& input, NormKind kind, const NormParams& p, const Tensor& g) {
  check_norm_params(input, kind, p);
  require_shape(g, input.shape(), "normalize_backward grad");
  const int64_t c = input.dim(0);
  const int64_t sites = input.numel() / c;
  NormGrads out{Tensor(input.shape()), Tensor(Shape{c}), Tensor(Shape{c})};
  const float* x = input.ptr();
  const float* gy = g.ptr();
  float* gx = out.input.ptr();
  if (kind == NormKind::BatchNormInference) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float inv = 1.0f / std::sqrt(p.var[ch] + p.eps);
      const float a = p.scale[ch] * inv;
      double gs = 0.0, gb = 0.0;
      for (int64_t s = 0; s < sites; ++s) {
        const int64_t i = ch * sites + s;
        gx[i] = gy[i] * a;
        gs += static_cast<double>(gy[i]) * ((x[i] - p.mean[ch]) * inv);
        gb += gy[i];
      }
      out.scale[ch] = static_cast<float>(gs);
      out.shift[ch] = static_cast<float>(gb);
    }
    return out;
  }
  std::vector<double> gscale(static_cast<size_t>(c), 0.0), gshift(static_cast<size_t>(c), 0.0);
  std::vector<double> xhat(static_cast<size_t>(c)), gxhat(static_cast<size_t>(c));
  for (int64_t s = 0; s < sites; ++s) {
    double mean = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) mean += x[ch * sites + s];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double dv = x[ch * sites + s] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(c);
    const double rstd = 1.0 / std::sqrt(var + static_cast<double>(p.eps));
    double mg = 0.0, mgx = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const size_t k = static_cast<size_t>(ch);
      const double gv = gy[ch * sites + s];
      xhat[k] = (x[ch * sites + s] - mean) * rstd;
      gxhat[k] = gv * p.scale[ch];
      gscale[k] += gv * xhat[k];
      gshift[k] += gv;
      mg += gxhat[k];
      mgx += gxhat[k] * xhat[k];
    }
    mg /= static_cast<double>(c);
    mgx /= static_cast<double>(c);
    for (int64_t ch = 0; ch < c; ++ch) {
      const size_t k = static_cast<size_t>(ch);
      gx[ch * sites + s] = static_cast<float>(rstd * (gxhat[k] - mg - xhat[k] * mgx));
    }
  }
  for (int64_t ch = 0; ch < c; ++ch) {
    out.scale[ch] = static_cast<float>(gscale[static_cast<size_t>(ch)]);
    out.shift[ch] = static_cast<float>(gshift[static_cast<size_t>(ch)]);
  }
  return out;
}

// ---------------------------------------------------------------- activation

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor activation(const Tensor& input, ActKind kind) {
  Tensor out(input.shape());
  const float* x = input.ptr();
  float* y = out.ptr();
  const int64_t n = input.numel();
  if (kind == ActKind::Relu6) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::min(std::max(x[i], 0.0f), 6.0f);
  } else {
    for (int64_t i = 0; i < n; ++i) {
      const double v = x[i];
      y[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
  }
  require_finite(out, "activation");
  return out;
}

Tensor activation_backward(const Tensor& input, ActKind kind, const Tensor& g) {
  require_shape(g, input.shape(), "activation_backward grad");
  Tensor out(input.shape());
  const float* x = input.ptr();
  const float* gy = g.ptr();
  float* gx = out.ptr();
  const int64_t n = input.numel();
  if (kind == ActKind::Relu6) {
    for (int64_t i = 0; i < n; ++i) gx[i] = (x[i] > 0.0f && x[i] < 6.0f) ? gy[i] : 0.0f;
  } else {
    for (int64_t i = 0; i < n; ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] = static_cast<float>(gy[i] * (cdf + v * pdf));
    }
  }
  return out;
}

// ------------------------------------------------------------------- resize

Tensor linear_resize_axis(const Tensor& input, int axis, int64_t out_len, bool align_corners) {
  axis = normalize_axis(axis, input.rank(), "linear_resize_axis");
  if (out_len <= 0) throw ShapeError("linear_resize_axis: output length must be positive");
  int64_t outer, len, inner;
  split_axis(input.shape(), axis, outer, len, inner);
  Shape os = input.shape();
  os[static_cast<size_t>(axis)] = out_len;
  Tensor out(os);
  const AxisTaps taps = make_taps(len, out_len, align_corners);
  const float* x = input.ptr();
  float* y = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t j = 0; j < out_len; ++j) {
      const size_t t = static_cast<size_t>(j);
      const float* a = x + (o * len + taps.i0[t]) * inner;
      const float* b = x + (o * len + taps.i1[t]) * inner;
      const float f = taps.frac[t];
      float* dst = y + (o * out_len + j) * inner;
      for (int64_t k = 0; k < inner; ++k) dst[k] = a[k] + f * (b[k] - a[k]);
    }
  }
  require_finite(out, "linear_resize_axis");
  return out;
}

Tensor linear_resize_axis_backward(const Shape& input_shape, int axis, bool align_corners, const Tensor& g) {
  axis = normalize_axis(axis, static_cast<int>(input_shape.size()), "linear_resize_axis_backward");
  int64_t outer, len, inner;
  split_axis(input_shape, axis, outer, len, inner);
  const int64_t out_len = g.dim(axis);
  Shape expect = input_shape;
  expect[static_cast<size_t>(axis)] = out_len;
  require_shape(g, expect, "linear_resize_axis_backward grad");
  Tensor gin(input_shape);
  const AxisTaps taps = make_taps(len, out_len, align_corners);
  const float* gy = g.ptr();
  float* gx = gin.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t j = 0; j < out_len; ++j) {
      const size_t t = static_cast<size_t>(j);
      float* a = gx + (o * len + taps.i0[t]) * inner;
      float* b = gx + (o * len + taps.i1[t]) * inner;
      const float f = taps.frac[t];
      const float* src = gy + (o * out_len + j) * inner;
      for (int64_t k = 0; k < inner; ++k) {
        a[k] += (1.0f - f) * src[k];
        b[k] += f * src[k];
      }
    }
  }
  return gin;
}

Tensor bilinear_resize(const Tensor& input, int64_t out_h, int64_t out_w, bool align_corners) {
  require_rank(input, 3, "bilinear_resize");
  Tensor tmp = linear_resize_axis(input, 2, out_w, align_corners);
  return linear_resize_axis(tmp, 1, out_h, align_corners);
}

Tensor bilinear_resize_backward(const Shape& input_shape, bool align_corners, const Tensor& g) {
  if (input_shape.size() != 3) throw ShapeError("bilinear_resize_backward: input must be rank 3");
  Shape mid{input_shape[0], input_shape[1], g.dim(2)};
  Tensor gmid = linear_resize_axis_backward(mid, 1, align_corners, g);
  return linear_resize_axis_backward(input_shape, 2, align_corners, gmid);
}

// ------------------------------------------------------------------ softmax

Tensor softmax_axis(const Tensor& input, int axis) {
  axis = normalize_axis(axis, input.rank(), "softmax_axis");
  int64_t outer, len, inner;
  split_axis(input.shape(), axis, outer, len, inner);
  Tensor out(input.shape());
  const float* x = input.ptr();
  float* y = out.ptr();
  std::vector<double> e(static_cast<size_t>(len));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < inner; ++k) {
      const int64_t base = o * len * inner + k;
      float mx = x[base];
      for (int64_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double sum = 0.0;
      for (int64_t j = 0; j < len; ++j) {
        e[static_cast<size_t>(j)] = std::exp(static_cast<double>(x[base + j * inner]) - mx);
        sum += e[static_cast<size_t>(j)];
      }
      for (int64_t j = 0; j < len; ++j) y[base + j * inner] = static_cast<float>(e[static_cast<size_t>(j)] / sum);
    }
  }
  require_finite(out, "softmax_axis");
  return out;
}

Tensor softmax_axis_backward(const Tensor& y, int axis, const Tensor& g) {
  axis = normalize_axis(axis, y.rank(), "softmax_axis_backward");
  require_shape(g, y.shape(), "softmax_axis_backward grad");
  int64_t outer, len, inner;
  split_axis(y.shape(), axis, outer, len, inner);
  Tensor gx(y.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < inner; ++k) {
      const int64_t base = o * len * inner + k;
      double dot = 0.0;
      for (int64_t j = 0; j < len; ++j) dot += static_cast<double>(g[base + j * inner]) * y[base + j * inner];
      for (int64_t j = 0; j < len; ++j) {
        const int64_t i = base + j * inner;
        gx[i] = static_cast<float>(y[i] * (g[i] - dot));
      }
    }
  }
  return gx;
}

Tensor argmax_axis(const Tensor& input, int axis) {
  if (detail::recording_depth() > 0)
    throw NotDifferentiableError("argmax_axis is not differentiable and cannot be used while recording");
  axis = normalize_axis(axis, input.rank(), "argmax_axis");
  int64_t outer, len, inner;
  split_axis(input.shape(), axis, outer, len, inner);
  Shape os = input.shape();
  os.erase(os.begin() + axis);
  if (os.empty()) os.push_back(1);
  Tensor out(os);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < inner; ++k) {
      const int64_t base = o * len * inner + k;
      int64_t best = 0;
      for (int64_t j = 1; j < len; ++j)
        if (input[base + j * inner] > input[base + best * inner]) best = j;
      out[o * inner + k] = static_cast<float>(best);
    }
  }
  return out;
}

// -------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "add");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  require_finite(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "sub");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  require_finite(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "mul");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  require_finite(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  require_finite(out, "scale");
  return out;
}

Tensor concat0(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape s = parts.front()->shape();
  int64_t total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), p->shape().begin() + 1))
      throw ShapeError("concat0: trailing shapes differ: " + shape_str(s) + " vs " + shape_str(p->shape()));
    total += p->dim(0);
  }
  s[0] = total;
  Tensor out(s);
  int64_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->data().begin(), p->data().end(), out.data().begin() + off);
    off += p->numel();
  }
  return out;
}

float sum_all(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data()) s += v;
  return static_cast<float>(s);
}

}  // namespace las
