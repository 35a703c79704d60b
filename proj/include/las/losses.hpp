#pragma once

#include "las/tensor.hpp"

namespace las {

// Masked mean of smooth-L1(pred - gt) with transition point 1:
// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise. mask entries > 0.5 are valid.
// Throws ShapeError when no pixel is valid.
double disparity_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask);
// d loss / d pred, scaled by `seed`.
Tensor disparity_loss_backward(const Tensor& pred, const Tensor& gt, const Tensor& mask, float seed = 1.0f);

// 1 - mean over sites of the cosine between channel vectors. Sites where
// either vector is zero contribute a cosine of 0.
double feature_align_loss(const Tensor& teacher, const Tensor& student);
struct FeatureAlignGrads {
  Tensor teacher;
  Tensor student;
};
FeatureAlignGrads feature_align_loss_backward(const Tensor& teacher, const Tensor& student, float seed = 1.0f);

}  // namespace las
