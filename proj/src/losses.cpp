#include "las/losses.hpp"

#include <algorithm>
#include <cmath>

namespace las {

namespace {

void check_disparity_args(const Tensor& pred, const Tensor& gt, const Tensor& mask, const char* op) {
  require_rank(pred, 2, op);
  require_shape(gt, pred.shape(), op);
  require_shape(mask, pred.shape(), op);
}

int64_t count_valid(const Tensor& mask) {
  int64_t n = 0;
  for (float m : mask.data()) n += m > 0.5f;
  return n;
}

}  // namespace

double disparity_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  check_disparity_args(pred, gt, mask, "disparity_loss");
  const int64_t n = count_valid(mask);
  if (n == 0) throw ShapeError("disparity_loss: mask has no valid pixel");
  double sum = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (!(mask[i] > 0.5f)) continue;
    const double x = static_cast<double>(pred[i]) - gt[i];
    const double ax = std::abs(x);
    sum += ax < 1.0 ? 0.5 * x * x : ax - 0.5;
  }
  return sum / static_cast<double>(n);
}

Tensor disparity_loss_backward(const Tensor& pred, const Tensor& gt, const Tensor& mask, float seed) {
  check_disparity_args(pred, gt, mask, "disparity_loss_backward");
  const int64_t n = count_valid(mask);
  if (n == 0) throw ShapeError("disparity_loss_backward: mask has no valid pixel");
  Tensor g(pred.shape());
  const double s = static_cast<double>(seed) / static_cast<double>(n);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (!(mask[i] > 0.5f)) continue;
    const double x = static_cast<double>(pred[i]) - gt[i];
    g[i] = static_cast<float>(std::clamp(x, -1.0, 1.0) * s);
  }
  return g;
}

namespace {

struct SiteStats {
  double dot = 0.0, na = 0.0, nb = 0.0;
};

SiteStats site_stats(const Tensor& a, const Tensor& b, int64_t c, int64_t sites, int64_t s) {
  SiteStats st;
  for (int64_t ch = 0; ch < c; ++ch) {
    const double x = a[ch * sites + s], y = b[ch * sites + s];
    st.dot += x * y;
    st.na += x * x;
    st.nb += y * y;
  }
  st.na = std::sqrt(st.na);
  st.nb = std::sqrt(st.nb);
  return st;
}

void check_feature_args(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() < 2) throw ShapeError(std::string(op) + ": features need a channel axis and spatial axes");
  require_shape(b, a.shape(), op);
}

}  // namespace

double feature_align_loss(const Tensor& teacher, const Tensor& student) {
  check_feature_args(teacher, student, "feature_align_loss");
  const int64_t c = teacher.dim(0), sites = teacher.numel() / c;
  double cos_sum = 0.0;
  for (int64_t s = 0; s < sites; ++s) {
    const SiteStats st = site_stats(teacher, student, c, sites, s);
    if (st.na > 0.0 && st.nb > 0.0) cos_sum += st.dot / (st.na * st.nb);
  }
  return 1.0 - cos_sum / static_cast<double>(sites);
}

FeatureAlignGrads feature_align_loss_backward(const Tensor& teacher, const Tensor& student, float seed) {
  check_feature_args(teacher, student, "feature_align_loss_backward");
  const int64_t c = teacher.dim(0), sites = teacher.numel() / c;
  FeatureAlignGrads g{Tensor(teacher.shape()), Tensor(student.shape())};
  const double k = -static_cast<double>(seed) / static_cast<double>(sites);
  for (int64_t s = 0; s < sites; ++s) {
    const SiteStats st = site_stats(teacher, student, c, sites, s);
    if (!(st.na > 0.0 && st.nb > 0.0)) continue;
    const double cosv = st.dot / (st.na * st.nb);
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t i = ch * sites + s;
      const double a = teacher[i], b = student[i];
      g.teacher[i] = static_cast<float>(k * (b / (st.na * st.nb) - cosv * a / (st.na * st.na)));
      g.student[i] = static_cast<float>(k * (a / (st.na * st.nb) - cosv * b / (st.nb * st.nb)));
    }
  }
  return g;
}

}  // namespace las
