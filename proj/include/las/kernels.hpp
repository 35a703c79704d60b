#pragma once

#include <array>
#include <cstdint>

#include "las/tensor.hpp"

// Numeric kernels over Tensor. Every kernel validates shapes, rejects
// non-finite results with NonFiniteError and reports its multiply-accumulate
// count to the active MacsLedger. Convolutions are cross-correlations with
// zero padding. Each output element is reduced in a fixed order, so results
// are bit-reproducible.
namespace las {

// ---------------------------------------------------------------- convolution

struct Conv2dOptions {
  std::array<int64_t, 2> stride{1, 1};
  std::array<int64_t, 2> padding{0, 0};
  int64_t groups = 1;
};

struct Conv3dOptions {
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> padding{0, 0, 0};
};

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;  // empty when the convolution had no bias
};

// input [C_in,H,W], kernel [C_out,C_in/groups,kh,kw], bias [C_out] or null.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, const Conv2dOptions& opt = {});
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, bool has_bias, const Tensor& grad_out,
                          const Conv2dOptions& opt = {});

// input [C_in,D,H,W], kernel [C_out,C_in,kd,kh,kw].
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor* bias, const Conv3dOptions& opt = {});
ConvGrads conv3d_backward(const Tensor& input, const Tensor& kernel, bool has_bias, const Tensor& grad_out,
                          const Conv3dOptions& opt = {});

// kernel [C,1,kh,kw]; a grouped conv2d with groups == C.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                        std::array<int64_t, 2> stride = {1, 1}, std::array<int64_t, 2> padding = {0, 0});

int64_t conv2d_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad);

// -------------------------------------------------------------- normalization

enum class NormKind { BatchNormInference, LayerNorm };

inline constexpr float kNormEps = 1e-5f;

// Per-channel parameters, channel axis 0. mean/var are used only by
// batch-norm-inference. Layer-norm normalizes over the channel axis at each
// spatial site.
struct NormParams {
  Tensor scale;
  Tensor shift;
  Tensor mean;
  Tensor var;
  float eps = kNormEps;
};

struct NormGrads {
  Tensor input;
  Tensor scale;
  Tensor shift;
};

Tensor normalize(const Tensor& input, NormKind kind, const NormParams& params);
NormGrads normalize_backward(const Tensor& input, NormKind kind, const NormParams& params, const Tensor& grad_out);

// ----------------------------------------------------------------- activation

enum class ActKind { Relu6, Gelu };

Tensor activation(const Tensor& input, ActKind kind);
Tensor activation_backward(const Tensor& input, ActKind kind, const Tensor& grad_out);

// ------------------------------------------------------------------- resizing

// Linear interpolation along one axis. align_corners=false uses the
// half-pixel convention with edge clamping.
Tensor linear_resize_axis(const Tensor& input, int axis, int64_t out_len, bool align_corners);
Tensor linear_resize_axis_backward(const Shape& input_shape, int axis, bool align_corners, const Tensor& grad_out);

// input [C,H,W] -> [C,out_h,out_w].
Tensor bilinear_resize(const Tensor& input, int64_t out_h, int64_t out_w, bool align_corners);
Tensor bilinear_resize_backward(const Shape& input_shape, bool align_corners, const Tensor& grad_out);

// ----------------------------------------------------------------- reductions

Tensor softmax_axis(const Tensor& input, int axis);
Tensor softmax_axis_backward(const Tensor& output, int axis, const Tensor& grad_out);

// Index of the maximum along `axis`, as floats. Not differentiable.
Tensor argmax_axis(const Tensor& input, int axis);

// --------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor concat0(const std::vector<const Tensor*>& parts);
float sum_all(const Tensor& a);

// Thread-local count of active recording regions, maintained by autodiff.
namespace detail {
int& recording_depth();
}

}  // namespace las
