#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "las/tensor.hpp"

namespace las {

// Pixel-wise disparity metrics over the pixels where mask > 0.5. Error
// thresholds are strict (err > x). Every function throws ShapeError on shape
// mismatch or an empty mask.
double epe(const Tensor& pred, const Tensor& gt, const Tensor& mask);
// Percent of valid pixels with err > 3 and err > 0.05 * gt.
double d1(const Tensor& pred, const Tensor& gt, const Tensor& mask);
double bad_x(const Tensor& pred, const Tensor& gt, const Tensor& mask, double x);

struct MetricReport {
  double epe = 0.0;
  double d1 = 0.0;                 // percent
  std::map<double, double> bad;    // threshold -> percent
  int64_t pixel_count = 0;
};

MetricReport report(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                    const std::vector<double>& thresholds = {1.0, 2.0, 3.0});

// Running pixel-weighted aggregate over many maps.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<double> thresholds = {1.0, 2.0, 3.0});
  void add(const Tensor& pred, const Tensor& gt, const Tensor& mask);
  MetricReport result() const;
  int64_t pixel_count() const { return pixels_; }

 private:
  std::vector<double> thresholds_;
  double abs_sum_ = 0.0;
  int64_t d1_count_ = 0;
  std::vector<int64_t> bad_counts_;
  int64_t pixels_ = 0;
};

// One table row: a named dataset (or split) with its report and the model
// cost in MACs.
struct MetricRow {
  std::string dataset;
  MetricReport metrics;
  int64_t macs = -1;  // omitted when negative
};

// Columns: dataset, D1, EPE, Bad-x per threshold, GMACs.
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string metrics_markdown(const std::vector<MetricRow>& rows);

}  // namespace las
