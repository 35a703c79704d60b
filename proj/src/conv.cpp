#include <algorithm>
#include <string>
#include <vector>

#include "las/kernels.hpp"
#include "las/macs.hpp"

namespace las {

namespace {

// Convolution over three spatial axes with channel groups. 2D convolutions
// run through here with a singleton depth axis.
struct Geometry {
  int64_t cin, d, h, w;
  int64_t cout, kd, kh, kw;
  int64_t sd, sh, sw;
  int64_t pd, ph, pw;
  int64_t groups;
  int64_t od, oh, ow;

  int64_t cin_g() const { return cin / groups; }
  int64_t cout_g() const { return cout / groups; }
  int64_t in_plane() const { return d * h * w; }
  int64_t out_plane() const { return od * oh * ow; }
  int64_t kvol() const { return kd * kh * kw; }
  int64_t macs() const { return cout * cin_g() * kvol() * out_plane(); }
};

// Valid output range [lo, hi) along one axis for kernel tap k.
inline void tap_range(int64_t k, int64_t stride, int64_t pad, int64_t in, int64_t out, int64_t& lo, int64_t& hi) {
  // need 0 <= o*stride + k - pad < in
  int64_t off = k - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  int64_t last = in - 1 - off;  // o*stride <= last
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  if (hi < lo) hi = lo;
}

// Each output channel is accumulated in a double buffer and rounded once, in
// the fixed order bias, then (input channel, kz, ky, kx).
void conv_forward(const Geometry& g, const float* in, const float* ker, const float* bias, float* out) {
  const int64_t cig = g.cin_g(), cog = g.cout_g();
  const int64_t oplane = g.out_plane(), iplane = g.in_plane();
  const bool pointwise = g.kvol() == 1 && g.sd == 1 && g.sh == 1 && g.sw == 1 && g.pd == 0 && g.ph == 0 && g.pw == 0;
  std::vector<double> acc(static_cast<size_t>(oplane));
  for (int64_t grp = 0; grp < g.groups; ++grp) {
    for (int64_t ocg = 0; ocg < cog; ++ocg) {
      const int64_t oc = grp * cog + ocg;
      double* o = acc.data();
      std::fill(o, o + oplane, bias ? static_cast<double>(bias[oc]) : 0.0);
      for (int64_t icg = 0; icg < cig; ++icg) {
        const float* x = in + (grp * cig + icg) * iplane;
        const float* kp = ker + (oc * cig + icg) * g.kvol();
        if (pointwise) {
          const double wv = kp[0];
          for (int64_t i = 0; i < oplane; ++i) o[i] += wv * x[i];
          continue;
        }
        for (int64_t kz = 0; kz < g.kd; ++kz) {
          int64_t z0, z1;
          tap_range(kz, g.sd, g.pd, g.d, g.od, z0, z1);
          for (int64_t ky = 0; ky < g.kh; ++ky) {
            int64_t y0, y1;
            tap_range(ky, g.sh, g.ph, g.h, g.oh, y0, y1);
            for (int64_t kx = 0; kx < g.kw; ++kx) {
              int64_t x0, x1;
              tap_range(kx, g.sw, g.pw, g.w, g.ow, x0, x1);
              const double wv = kp[(kz * g.kh + ky) * g.kw + kx];
              for (int64_t oz = z0; oz < z1; ++oz) {
                const int64_t iz = oz * g.sd + kz - g.pd;
                for (int64_t oy = y0; oy < y1; ++oy) {
                  const int64_t iy = oy * g.sh + ky - g.ph;
                  double* orow = o + (oz * g.oh + oy) * g.ow;
                  const float* xrow = x + (iz * g.h + iy) * g.w + (kx - g.pw);
                  if (g.sw == 1) {
                    for (int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox];
                  } else {
                    for (int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox * g.sw];
                  }
                }
              }
            }
          }
        }
      }
      float* dst = out + oc * oplane;
      for (int64_t i = 0; i < oplane; ++i) dst[i] = static_cast<float>(o[i]);
    }
  }
}

void conv_backward(const Geometry& g, const float* in, const float* ker, const float* gout, float* gin, float* gker,
                   float* gbias) {
  const int64_t cig = g.cin_g(), cog = g.cout_g();
  const int64_t oplane = g.out_plane(), iplane = g.in_plane();
  std::fill(gin, gin + g.cin * iplane, 0.0f);
  if (gbias) {
    for (int64_t oc = 0; oc < g.cout; ++oc) {
      double s = 0.0;
      const float* go = gout + oc * oplane;
      for (int64_t i = 0; i < oplane; ++i) s += go[i];
      gbias[oc] = static_cast<float>(s);
    }
  }
  for (int64_t grp = 0; grp < g.groups; ++grp) {
    for (int64_t ocg = 0; ocg < cog; ++ocg) {
      const int64_t oc = grp * cog + ocg;
      const float* go = gout + oc * oplane;
      for (int64_t icg = 0; icg < cig; ++icg) {
        const int64_t ic = grp * cig + icg;
        const float* x = in + ic * iplane;
        float* gx = gin + ic * iplane;
        const float* kp = ker + (oc * cig + icg) * g.kvol();
        float* gk = gker + (oc * cig + icg) * g.kvol();
        for (int64_t kz = 0; kz < g.kd; ++kz) {
          int64_t z0, z1;
          tap_range(kz, g.sd, g.pd, g.d, g.od, z0, z1);
          for (int64_t ky = 0; ky < g.kh; ++ky) {
            int64_t y0, y1;
            tap_range(ky, g.sh, g.ph, g.h, g.oh, y0, y1);
            for (int64_t kx = 0; kx < g.kw; ++kx) {
              int64_t x0, x1;
              tap_range(kx, g.sw, g.pw, g.w, g.ow, x0, x1);
              const int64_t kidx = (kz * g.kh + ky) * g.kw + kx;
              const float wv = kp[kidx];
              double acc = 0.0;
              for (int64_t oz = z0; oz < z1; ++oz) {
                const int64_t iz = oz * g.sd + kz - g.pd;
                for (int64_t oy = y0; oy < y1; ++oy) {
                  const int64_t iy = oy * g.sh + ky - g.ph;
                  const float* gorow = go + (oz * g.oh + oy) * g.ow;
                  const int64_t base = (iz * g.h + iy) * g.w + (kx - g.pw);
                  const float* xrow = x + base;
                  float* gxrow = gx + base;
                  float row = 0.0f;
                  if (g.sw == 1) {
                    for (int64_t ox = x0; ox < x1; ++ox) {
                      row += gorow[ox] * xrow[ox];
                      gxrow[ox] += wv * gorow[ox];
                    }
                  } else {
                    for (int64_t ox = x0; ox < x1; ++ox) {
                      row += gorow[ox] * xrow[ox * g.sw];
                      gxrow[ox * g.sw] += wv * gorow[ox];
                    }
                  }
                  acc += row;
                }
              }
              gk[kidx] = static_cast<float>(acc);
            }
          }
        }
      }
    }
  }
}

Geometry geometry_3d(const Tensor& input, const Tensor& kernel, std::array<int64_t, 3> stride,
                     std::array<int64_t, 3> padding, int64_t groups, const char* op) {
  require_rank(input, 4, op);
  require_rank(kernel, 5, op);
  Geometry g{};
  g.cin = input.dim(0);
  g.d = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.kd = kernel.dim(2);
  g.kh = kernel.dim(3);
  g.kw = kernel.dim(4);
  g.sd = stride[0];
  g.sh = stride[1];
  g.sw = stride[2];
  g.pd = padding[0];
  g.ph = padding[1];
  g.pw = padding[2];
  g.groups = groups;
  if (groups <= 0 || g.cin % groups != 0 || g.cout % groups != 0)
    throw ShapeError(std::string(op) + ": channels not divisible by groups");
  if (kernel.dim(1) != g.cin / groups)
    throw ShapeError(std::string(op) + ": kernel in-channels " + std::to_string(kernel.dim(1)) +
                     " do not match input " + shape_str(input.shape()) + " / groups " + std::to_string(groups));
  for (auto s : stride)
    if (s <= 0) throw ShapeError(std::string(op) + ": stride must be positive");
  for (auto p : padding)
    if (p < 0) throw ShapeError(std::string(op) + ": padding must be non-negative");
  g.od = conv2d_out_extent(g.d, g.kd, g.sd, g.pd);
  g.oh = conv2d_out_extent(g.h, g.kh, g.sh, g.ph);
  g.ow = conv2d_out_extent(g.w, g.kw, g.sw, g.pw);
  if (g.od <= 0 || g.oh <= 0 || g.ow <= 0)
    throw ShapeError(std::string(op) + ": kernel larger than padded input " + shape_str(input.shape()));
  return g;
}

void check_bias(const Tensor* bias, int64_t cout, const char* op) {
  if (bias) require_shape(*bias, Shape{cout}, op);
}

Tensor run_forward(const Geometry& g, const Tensor& input, const Tensor& kernel, const Tensor* bias,
                   const char* op) {
  Tensor out(Shape{g.cout, g.od, g.oh, g.ow});
  macs::report(op, g.macs(),
               {g.cin, g.d, g.h, g.w, g.cout, g.kd, g.kh, g.kw, g.sd, g.sh, g.sw, g.pd, g.ph, g.pw, g.groups});
  if (macs::shapes_only()) return out;
  conv_forward(g, input.ptr(), kernel.ptr(), bias ? bias->ptr() : nullptr, out.ptr());
  require_finite(out, op);
  return out;
}

ConvGrads run_backward(const Geometry& g, const Tensor& input, const Tensor& kernel, bool has_bias,
                       const Tensor& grad_out) {
  ConvGrads grads{Tensor(input.shape()), Tensor(kernel.shape()), has_bias ? Tensor(Shape{g.cout}) : Tensor()};
  conv_backward(g, input.ptr(), kernel.ptr(), grad_out.ptr(), grads.input.ptr(), grads.kernel.ptr(),
                has_bias ? grads.bias.ptr() : nullptr);
  return grads;
}

}  // namespace

int64_t conv2d_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, const Conv2dOptions& opt) {
  require_rank(input, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  Geometry g = geometry_3d(input.reshaped({is[0], 1, is[1], is[2]}), kernel.reshaped({ks[0], ks[1], 1, ks[2], ks[3]}),
                           {1, opt.stride[0], opt.stride[1]}, {0, opt.padding[0], opt.padding[1]}, opt.groups,
                           "conv2d");
  check_bias(bias, g.cout, "conv2d bias");
  Tensor out = run_forward(g, input, kernel, bias, opt.groups == g.cin && opt.groups > 1 ? "depthwise_conv2d" : "conv2d");
  return out.reshaped({g.cout, g.oh, g.ow});
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, bool has_bias, const Tensor& grad_out,
                          const Conv2dOptions& opt) {
  require_rank(input, 3, "conv2d_backward");
  require_rank(kernel, 4, "conv2d_backward");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  Geometry g = geometry_3d(input.reshaped({is[0], 1, is[1], is[2]}), kernel.reshaped({ks[0], ks[1], 1, ks[2], ks[3]}),
                           {1, opt.stride[0], opt.stride[1]}, {0, opt.padding[0], opt.padding[1]}, opt.groups,
                           "conv2d_backward");
  require_shape(grad_out, Shape{g.cout, g.oh, g.ow}, "conv2d_backward grad");
  return run_backward(g, input, kernel, has_bias, grad_out);
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor* bias, const Conv3dOptions& opt) {
  Geometry g = geometry_3d(input, kernel, opt.stride, opt.padding, 1, "conv3d");
  check_bias(bias, g.cout, "conv3d bias");
  return run_forward(g, input, kernel, bias, "conv3d");
}

ConvGrads conv3d_backward(const Tensor& input, const Tensor& kernel, bool has_bias, const Tensor& grad_out,
                          const Conv3dOptions& opt) {
  Geometry g = geometry_3d(input, kernel, opt.stride, opt.padding, 1, "conv3d_backward");
  require_shape(grad_out, Shape{g.cout, g.od, g.oh, g.ow}, "conv3d_backward grad");
  return run_backward(g, input, kernel, has_bias, grad_out);
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::array<int64_t, 2> stride,
                        std::array<int64_t, 2> padding) {
  require_rank(input, 3, "depthwise_conv2d");
  require_rank(kernel, 4, "depthwise_conv2d");
  if (kernel.dim(0) != input.dim(0) || kernel.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: kernel must be [C,1,kh,kw] with C = " + std::to_string(input.dim(0)));
  return conv2d(input, kernel, bias, Conv2dOptions{stride, padding, input.dim(0)});
}

}  // namespace las
