#pragma once

// Foreground segmentation metrics: S-measure, E-measure, max F-measure,
// weighted F-measure, plus dataset-level aggregation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "distance_transform.hpp"
#include "raster.hpp"

namespace segrl {

inline constexpr double kMetricEps = 1e-8;
inline constexpr double kSMeasureAlpha = 0.5;
inline constexpr double kFMaxBetaSq = 0.3;
inline constexpr int kFMaxThresholds = 256;
inline constexpr double kWeightedFBetaSq = 1.0;
inline constexpr int kWeightedFKernel = 7;
inline constexpr double kWeightedFSigma = 5.0;
inline constexpr double kWeightedFDecay = 5.0;

namespace detail {

// The epsilon is only added when the denominator is exactly zero, so exact
// agreement still yields exactly 1.
inline double guarded_div(double num, double den) { return num / (den == 0.0 ? kMetricEps : den); }

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Neumaier compensated accumulator.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Running moments of a (pred, gt) pixel pair population.
struct PairMoments {
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  double xmin = 1, xmax = 0, ymin = 1, ymax = 0;

  void add(double x, double y) {
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
};

// Structural similarity of one quadrant.
inline double quadrant_ssim(const PairMoments& m) {
  if (m.n == 0) return 0.0;
  const bool x_const = m.xmin == m.xmax;
  const bool y_const = m.ymin == m.ymax;
  if (x_const && y_const) return m.xmin == m.ymin ? 1.0 : 0.0;
  const double mx = m.sx / m.n;
  const double my = m.sy / m.n;
  const double denom = m.n * (m.n - 1.0 + kMetricEps);
  const double var_x = std::max(0.0, (m.n * m.sxx - m.sx * m.sx) / denom);
  const double var_y = std::max(0.0, (m.n * m.syy - m.sy * m.sy) / denom);
  const double cov = (m.n * m.sxy - m.sx * m.sy) / denom;
  const double a = 4.0 * mx * my * cov;
  const double b = (mx * mx + my * my) * (var_x + var_y);
  if (a != 0.0) return guarded_div(a, b);
  return 0.0;
}

inline double object_similarity(double n, double s, double ss) {
  const double mean = s / n;
  const double var = n > 1 ? std::max(0.0, (ss - s * s / n) / (n - 1.0)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + std::sqrt(var));
}

}  // namespace detail

/// Structure measure with alpha = 0.5 (object-aware + region-aware terms).
inline double s_measure(const SoftMap& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "s_measure");
  const int w = gt.width();
  const int h = gt.height();
  const auto n_total = static_cast<double>(gt.size());
  const auto fg = static_cast<double>(gt.count());

  double pred_sum = 0.0;
  for (double v : pred.values()) pred_sum += v;
  if (fg == 0) return detail::clamp01(1.0 - pred_sum / n_total);
  if (fg == n_total) return detail::clamp01(pred_sum / n_total);

  // Object term: foreground pred on gt, and inverted pred on background.
  double fs = 0, fss = 0, bs = 0, bss = 0;
  // Centroid accumulation.
  double col_acc = 0, row_acc = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double p = pred.at(x, y);
      if (gt.at(x, y)) {
        fs += p;
        fss += p * p;
        col_acc += x;
        row_acc += y;
      } else {
        const double q = 1.0 - p;
        bs += q;
        bss += q * q;
      }
    }
  }
  // Blends below are written as base + weight * (other - base) so that all
  // terms equal to 1 give exactly 1.
  const double u = fg / n_total;
  const double o_fg = detail::object_similarity(fg, fs, fss);
  const double o_bg = detail::object_similarity(n_total - fg, bs, bss);
  const double object = o_bg + u * (o_fg - o_bg);

  // Region term: split at the rounded centroid. The split column/row index is
  // the first column/row of the right/bottom quadrants.
  const int cx = static_cast<int>(std::round(col_acc / fg)) + 1;
  const int cy = static_cast<int>(std::round(row_acc / fg)) + 1;
  std::array<detail::PairMoments, 4> quad;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int q = (y < cy ? 0 : 2) + (x < cx ? 0 : 1);
      quad[q].add(pred.at(x, y), gt.at(x, y) ? 1.0 : 0.0);
    }
  }
  const double area = n_total;
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(w - cx) * cy / area;
  const double w3 = static_cast<double>(cx) * (h - cy) / area;
  const double q4 = detail::quadrant_ssim(quad[3]);  // weight 1 - w1 - w2 - w3
  const double region = q4 + w1 * (detail::quadrant_ssim(quad[0]) - q4) + w2 * (detail::quadrant_ssim(quad[1]) - q4) +
                        w3 * (detail::quadrant_ssim(quad[2]) - q4);

  return detail::clamp01(kSMeasureAlpha * object + (1.0 - kSMeasureAlpha) * region);
}

/// Enhanced-alignment measure on binary maps.
inline double e_measure(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "e_measure");
  const auto n = static_cast<double>(gt.size());
  const auto fg = gt.count();
  detail::CompensatedSum total;
  if (fg == 0) {
    for (std::size_t i = 0; i < pred.size(); ++i) total.add(pred.at(i) ? 0.0 : 1.0);
  } else if (fg == gt.size()) {
    for (std::size_t i = 0; i < pred.size(); ++i) total.add(pred.at(i) ? 1.0 : 0.0);
  } else {
    const double mp = static_cast<double>(pred.count()) / n;
    const double mg = static_cast<double>(fg) / n;
    // Only four (pred, gt) combinations exist; weight each by its count.
    std::array<std::size_t, 4> counts{};
    for (std::size_t i = 0; i < pred.size(); ++i) ++counts[(pred.at(i) ? 2 : 0) + (gt.at(i) ? 1 : 0)];
    for (int c = 0; c < 4; ++c) {
      const double a = ((c & 2) ? 1.0 : 0.0) - mp;
      const double b = ((c & 1) ? 1.0 : 0.0) - mg;
      const double align = detail::guarded_div(2.0 * a * b, a * a + b * b);
      const double enhanced = (align + 1.0) * (align + 1.0) / 4.0;
      total.add(enhanced * static_cast<double>(counts[c]));
    }
  }
  return detail::clamp01(total.value() / (n - 1.0 + kMetricEps));
}

/// F-measure result; `gt_empty` marks the undefined case (value is then 0).
struct FScore {
  double value = 0.0;
  bool gt_empty = false;
};

inline double f_beta(double precision, double recall, double beta_sq) {
  return detail::guarded_div((1.0 + beta_sq) * precision * recall, beta_sq * precision + recall);
}

/// Maximum F-beta (beta^2 = 0.3) over 256 thresholds k/256, binarizing pred > k/256.
inline FScore f_max(const SoftMap& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "f_max");
  const auto gt_count = gt.count();
  if (gt_count == 0) return {0.0, true};
  // Histogram pred values by the highest threshold index they exceed.
  std::array<std::size_t, kFMaxThresholds> fg_hist{};
  std::array<std::size_t, kFMaxThresholds> bg_hist{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double v = pred[i];
    if (v <= 0.0) continue;
    // largest k with k/256 < v
    int k = static_cast<int>(std::ceil(v * kFMaxThresholds)) - 1;
    k = std::clamp(k, 0, kFMaxThresholds - 1);
    (gt.at(i) ? fg_hist : bg_hist)[k]++;
  }
  double best = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (int k = kFMaxThresholds - 1; k >= 0; --k) {
    tp += fg_hist[k];
    fp += bg_hist[k];
    const double precision = detail::guarded_div(static_cast<double>(tp), static_cast<double>(tp + fp));
    const double recall = static_cast<double>(tp) / static_cast<double>(gt_count);
    best = std::max(best, f_beta(precision, recall, kFMaxBetaSq));
  }
  return {detail::clamp01(best), false};
}

namespace detail {

inline std::array<double, kWeightedFKernel> gaussian_1d() {
  std::array<double, kWeightedFKernel> g{};
  double s = 0.0;
  const int r = kWeightedFKernel / 2;
  for (int i = -r; i <= r; ++i) {
    g[i + r] = std::exp(-(i * i) / (2.0 * kWeightedFSigma * kWeightedFSigma));
    s += g[i + r];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Same-size correlation with zero padding, separable.
inline std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h) {
  const auto g = gaussian_1d();
  const int r = kWeightedFKernel / 2;
  std::vector<double> tmp(src.size(), 0.0);
  std::vector<double> out(src.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) acc += g[k + r] * src[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) acc += g[k + r] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Weighted F-measure (beta^2 = 1). Background errors are first replaced by
/// the error at the nearest gt foreground pixel (mean over equidistant ties),
/// smoothed by a 7x7 Gaussian (sigma 5), and background pixels are weighted by
/// 2 - exp(ln(0.5)/5 * distance).
inline FScore f_weighted(const SoftMap& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "f_weighted");
  const int w = gt.width();
  const int h = gt.height();
  const auto gt_count = gt.count();
  if (gt_count == 0) return {0.0, true};

  const std::size_t n = gt.size();
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(pred[i] - (gt.at(i) ? 1.0 : 0.0));

  const DistanceField df = distance_transform(gt);
  std::vector<double> dependent = err;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = gt.index(x, y);
      if (gt.at(i)) continue;
      double s = 0.0;
      int c = 0;
      for_each_nearest_foreground(gt, df, x, y, [&](std::size_t j) {
        s += err[j];
        ++c;
      });
      dependent[i] = s / c;
    }

  const std::vector<double> smoothed = detail::gaussian_blur(dependent, w, h);
  const double decay = std::log(0.5) / kWeightedFDecay;

  detail::CompensatedSum fg_err;
  detail::CompensatedSum bg_err;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.at(i)) {
      fg_err.add(std::min(err[i], smoothed[i]));
    } else {
      const double importance = 2.0 - std::exp(decay * df.distance(i));
      bg_err.add(err[i] * importance);
    }
  }
  const double fgc = static_cast<double>(gt_count);
  const double tp_w = fgc - fg_err.value();
  const double recall = 1.0 - fg_err.value() / fgc;
  const double precision = detail::guarded_div(tp_w, tp_w + bg_err.value());
  return {detail::clamp01(f_beta(precision, recall, kWeightedFBetaSq)), false};
}

/// Dataset means of every metric. f_max / f_weighted skip empty-gt samples,
/// which are tallied in `undefined_f_count`.
struct MetricReport {
  double s_measure = 0.0;
  double e_measure = 0.0;
  double f_max = 0.0;
  double f_weighted = 0.0;
  double mae = 0.0;
  double iou = 0.0;
  std::size_t sample_count = 0;
  std::size_t undefined_f_count = 0;

  // `s,e,f_max,f_w,mae,iou,n`
  std::string csv_row() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%zu", s_measure, e_measure, f_max,
                  f_weighted, mae, iou, sample_count);
    return buf;
  }
  static std::string csv_header() { return "s,e,f_max,f_w,mae,iou,n"; }
};

struct SampleMetrics {
  double s_measure, e_measure, mae, iou;
  FScore f_max, f_weighted;
};

inline SampleMetrics evaluate_sample(const BinaryMask& pred, const BinaryMask& gt) {
  const SoftMap soft(pred);
  return {s_measure(soft, gt), e_measure(pred, gt), mae(soft, gt), iou(pred, gt), f_max(soft, gt),
          f_weighted(soft, gt)};
}

inline MetricReport evaluate_dataset(const std::vector<BinaryMask>& preds,
                                     const std::vector<BinaryMask>& gts) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("evaluate_dataset: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(gts.size()) + " ground truths");
  if (preds.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");
  detail::CompensatedSum s, e, fm, fw, m, io;
  std::size_t f_defined = 0;
  MetricReport report;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].width() != gts[i].width() || preds[i].height() != gts[i].height())
      throw DimensionMismatch("evaluate_dataset: sample " + std::to_string(i), preds[i].width(),
                              preds[i].height(), gts[i].width(), gts[i].height());
    const SampleMetrics sm = evaluate_sample(preds[i], gts[i]);
    s.add(sm.s_measure);
    e.add(sm.e_measure);
    m.add(sm.mae);
    io.add(sm.iou);
    if (sm.f_max.gt_empty) {
      ++report.undefined_f_count;
    } else {
      fm.add(sm.f_max.value);
      fw.add(sm.f_weighted.value);
      ++f_defined;
    }
  }
  const auto count = static_cast<double>(preds.size());
  report.sample_count = preds.size();
  report.s_measure = s.value() / count;
  report.e_measure = e.value() / count;
  report.mae = m.value() / count;
  report.iou = io.value() / count;
  if (f_defined > 0) {
    report.f_max = fm.value() / static_cast<double>(f_defined);
    report.f_weighted = fw.value() / static_cast<double>(f_defined);
  }
  return report;
}

}  // namespace segrl
