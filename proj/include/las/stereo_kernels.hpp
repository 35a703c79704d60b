#pragma once

#include "las/tensor.hpp"

// Tensor-level kernels specific to the stereo pipeline, with their backward
// rules. The autodiff layer wraps these; the network composes them.
namespace las {

// Correlation cost volume at one resolution:
//   cost(d,h,w) = (1/C) * <left(:,h,w), right(:,h,w-d)>,  0 where w-d < 0.
// left/right [C,H,W] -> [levels,H,W].
Tensor correlation_volume(const Tensor& left, const Tensor& right, int64_t levels);
struct CorrelationGrads {
  Tensor left;
  Tensor right;
};
CorrelationGrads correlation_volume_backward(const Tensor& left, const Tensor& right, const Tensor& grad_out);

// Expected disparity index under per-pixel weights over axis 0:
//   out(h,w) = sum_d d * prob(d,h,w).   prob [D,H,W] -> [H,W].
Tensor disparity_expectation(const Tensor& prob);
Tensor disparity_expectation_backward(const Shape& prob_shape, const Tensor& grad_out);

inline constexpr int64_t kUpsampleFactor = 4;
inline constexpr int64_t kConvexTaps = 9;

// Each fine pixel (4h+i, 4w+j) is a convex combination of the 3x3 coarse
// neighbourhood of (h,w), with weights softmax(mask[k*16 + i*4 + j, h, w])
// over k = 3*(dy+1) + (dx+1). Neighbours beyond the border are clamped to the
// edge. The result is scaled by 4 to express disparity at full resolution.
// disp [H,W], mask [144,H,W] -> [4H,4W].
Tensor convex_upsample(const Tensor& disp, const Tensor& mask);
struct ConvexUpsampleGrads {
  Tensor disp;
  Tensor mask;
};
ConvexUpsampleGrads convex_upsample_backward(const Tensor& disp, const Tensor& mask, const Tensor& grad_out);

}  // namespace las
