#include "las/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>

namespace las {

namespace {

void check(const Tensor& pred, const Tensor& gt, const Tensor& mask, const char* what) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ShapeError(std::string(what) + ": pred " + shape_str(pred.shape()) + ", gt " + shape_str(gt.shape()) +
                     ", mask " + shape_str(mask.shape()) + " must match");
}

struct Counts {
  double abs_sum = 0.0;
  int64_t d1 = 0;
  std::vector<int64_t> bad;
  int64_t n = 0;
};

Counts count(const Tensor& pred, const Tensor& gt, const Tensor& mask, const std::vector<double>& thresholds,
             const char* what) {
  check(pred, gt, mask, what);
  Counts c;
  c.bad.assign(thresholds.size(), 0);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (!(mask[i] > 0.5f)) continue;
    const double err = std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
    c.abs_sum += err;
    if (err > 3.0 && err > 0.05 * static_cast<double>(gt[i])) ++c.d1;
    for (size_t t = 0; t < thresholds.size(); ++t)
      if (err > thresholds[t]) ++c.bad[t];
    ++c.n;
  }
  if (c.n == 0) throw ShapeError(std::string(what) + ": mask has no valid pixel");
  return c;
}

double percent(int64_t k, int64_t n) { return 100.0 * static_cast<double>(k) / static_cast<double>(n); }

}  // namespace

double epe(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  const Counts c = count(pred, gt, mask, {}, "epe");
  return c.abs_sum / static_cast<double>(c.n);
}

double d1(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  const Counts c = count(pred, gt, mask, {}, "d1");
  return percent(c.d1, c.n);
}

double bad_x(const Tensor& pred, const Tensor& gt, const Tensor& mask, double x) {
  const Counts c = count(pred, gt, mask, {x}, "bad_x");
  return percent(c.bad[0], c.n);
}

MetricReport report(const Tensor& pred, const Tensor& gt, const Tensor& mask, const std::vector<double>& thresholds) {
  MetricAccumulator acc(thresholds);
  acc.add(pred, gt, mask);
  return acc.result();
}

MetricAccumulator::MetricAccumulator(std::vector<double> thresholds)
    : thresholds_(std::move(thresholds)), bad_counts_(thresholds_.size(), 0) {}

void MetricAccumulator::add(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  const Counts c = count(pred, gt, mask, thresholds_, "metrics");
  abs_sum_ += c.abs_sum;
  d1_count_ += c.d1;
  for (size_t t = 0; t < thresholds_.size(); ++t) bad_counts_[t] += c.bad[t];
  pixels_ += c.n;
}

MetricReport MetricAccumulator::result() const {
  if (pixels_ == 0) throw ShapeError("metrics: no valid pixel accumulated");
  MetricReport r;
  r.epe = abs_sum_ / static_cast<double>(pixels_);
  r.d1 = percent(d1_count_, pixels_);
  for (size_t t = 0; t < thresholds_.size(); ++t) r.bad[thresholds_[t]] = percent(bad_counts_[t], pixels_);
  r.pixel_count = pixels_;
  return r;
}

namespace {

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::set<double> all_thresholds(const std::vector<MetricRow>& rows) {
  std::set<double> t;
  for (const auto& r : rows)
    for (const auto& [x, v] : r.metrics.bad) t.insert(x);
  return t;
}

std::string bad_header(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Bad-%g", x);
  return buf;
}

std::vector<std::vector<std::string>> table(const std::vector<MetricRow>& rows) {
  const std::set<double> ts = all_thresholds(rows);
  bool any_macs = false;
  for (const auto& r : rows) any_macs = any_macs || r.macs >= 0;
  std::vector<std::string> header{"dataset", "D1", "EPE"};
  for (double x : ts) header.push_back(bad_header(x));
  if (any_macs) header.push_back("GMACs");
  std::vector<std::vector<std::string>> out{header};
  for (const auto& r : rows) {
    std::vector<std::string> line{r.dataset, fmt(r.metrics.d1, 2), fmt(r.metrics.epe, 3)};
    for (double x : ts) {
      auto it = r.metrics.bad.find(x);
      line.push_back(it == r.metrics.bad.end() ? "" : fmt(it->second, 2));
    }
    if (any_macs) line.push_back(r.macs >= 0 ? fmt(static_cast<double>(r.macs) / 1e9, 3) : "");
    out.push_back(line);
  }
  return out;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string s;
  for (const auto& line : table(rows)) {
    for (size_t i = 0; i < line.size(); ++i) {
      if (i) s += ',';
      s += line[i];
    }
    s += '\n';
  }
  return s;
}

std::string metrics_markdown(const std::vector<MetricRow>& rows) {
  const auto t = table(rows);
  std::string s;
  for (size_t r = 0; r < t.size(); ++r) {
    s += '|';
    for (const auto& cell : t[r]) s += ' ' + cell + " |";
    s += '\n';
    if (r == 0) {
      s += '|';
      for (size_t i = 0; i < t[0].size(); ++i) s += i == 0 ? " --- |" : " ---: |";
      s += '\n';
    }
  }
  return s;
}

}  // namespace las
