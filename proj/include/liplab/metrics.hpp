#pragma once

// Segmentation metrics: Dice, IoU, VOE, Hausdorff distance, pixel accuracy, and batch reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/imagio.hpp"

namespace liplab::metrics {

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
};

inline void check_same_dims(const BinaryMask& gt, const BinaryMask& pred) {
  if (gt.height != pred.height || gt.width != pred.width) {
    throw ShapeError("mask dimensions differ: " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                     " vs " + std::to_string(pred.height) + "x" + std::to_string(pred.width));
  }
}

inline ConfusionCounts confusion(const BinaryMask& gt, const BinaryMask& pred) {
  check_same_dims(gt, pred);
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.bits.size(); ++i) {
    const bool g = gt.bits[i] != 0, p = pred.bits[i] != 0;
    if (g && p) ++c.tp;
    else if (!g && !p) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

struct Overlap {
  double dice = 1.0;
  double iou = 1.0;
  double voe = 0.0;
};

/// Dice, IoU and VOE = 1 - IoU. Two empty masks count as perfect agreement.
inline Overlap overlap_metrics(const BinaryMask& gt, const BinaryMask& pred) {
  const ConfusionCounts c = confusion(gt, pred);
  const double inter = static_cast<double>(c.tp);
  const double sum = static_cast<double>(2 * c.tp + c.fp + c.fn);
  const double uni = static_cast<double>(c.tp + c.fp + c.fn);
  if (uni == 0.0) return {};
  const double iou = inter / uni;
  return {2.0 * inter / sum, iou, 1.0 - iou};
}

namespace detail {

inline constexpr std::int64_t kFar = std::int64_t{1} << 40;

/// Exact 1D squared distance transform (lower envelope of parabolas). Intersections are kept as
/// fractions so every comparison is exact in integer arithmetic.
inline void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<std::int64_t> z_num(n + 1), z_den(n + 1);
  int k = -1;
  // Intersection abscissa of parabolas rooted at q and p (q > p) as num/den with den > 0.
  auto meet = [&](int q, int p, std::int64_t& num, std::int64_t& den) {
    num = (f[q] + std::int64_t{q} * q) - (f[p] + std::int64_t{p} * p);
    den = 2 * std::int64_t{q - p};
  };
  for (int q = 0; q < n; ++q) {
    if (f[q] >= kFar) continue;
    if (k < 0) {
      v[0] = q;
      k = 0;
      continue;
    }
    std::int64_t num, den;
    meet(q, v[k], num, den);
    // Pop while the new intersection lies at or before the previous boundary.
    while (k > 0 && num * z_den[k] <= z_num[k] * den) {
      --k;
      meet(q, v[k], num, den);
    }
    ++k;
    v[k] = q;
    z_num[k] = num;
    z_den[k] = den;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kFar);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (j < k && z_num[j + 1] < std::int64_t{q} * z_den[j + 1]) ++j;
    const std::int64_t dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace detail

/// Squared Euclidean distance from every pixel center to the nearest foreground pixel center.
/// Pixels are `kFar` away when the mask is empty.
inline std::vector<std::int64_t> squared_distance_transform(const BinaryMask& m) {
  const int h = m.height, w = m.width;
  std::vector<std::int64_t> grid(static_cast<std::size_t>(h) * w);
  std::vector<std::int64_t> f(h), d(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = m.at(y, x) ? 0 : detail::kFar;
    detail::edt_1d(f, d);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  std::vector<std::int64_t> row(w), out(w);
  for (int y = 0; y < h; ++y) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(y) * w, w, row.begin());
    detail::edt_1d(row, out);
    std::copy(out.begin(), out.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  return grid;
}

/// max over x in `from` of the distance to the nearest pixel of `to`.
inline double directed_hausdorff(const BinaryMask& from, const BinaryMask& to) {
  check_same_dims(from, to);
  if (from.count() == 0 || to.count() == 0) throw DataError("HD undefined for an empty mask");
  const auto dt = squared_distance_transform(to);
  std::int64_t worst = 0;
  for (std::size_t i = 0; i < from.bits.size(); ++i) {
    if (from.bits[i]) worst = std::max(worst, dt[i]);
  }
  return std::sqrt(static_cast<double>(worst));
}

/// Symmetric Hausdorff distance over foreground pixel centers, in pixels.
inline double hausdorff(const BinaryMask& gt, const BinaryMask& pred) {
  return std::max(directed_hausdorff(gt, pred), directed_hausdorff(pred, gt));
}

struct PixelAccuracy {
  double pa = 0.0;
  std::optional<double> pa_c;  ///< missing when the ground truth has no foreground
  ConfusionCounts counts;
};

inline PixelAccuracy pixel_accuracy(const BinaryMask& gt, const BinaryMask& pred) {
  PixelAccuracy out;
  out.counts = confusion(gt, pred);
  const auto& c = out.counts;
  out.pa = c.total() ? static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()) : 1.0;
  if (c.tp + c.fn > 0) out.pa_c = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return out;
}

struct ImageMetrics {
  std::string image;
  double dice = 0, iou = 0, voe = 0, pa = 0;
  std::optional<double> hd;
  std::optional<double> pa_c;
};

inline ImageMetrics evaluate_pair(const std::string& name, const BinaryMask& gt, const BinaryMask& pred) {
  ImageMetrics m;
  m.image = name;
  const Overlap o = overlap_metrics(gt, pred);
  m.dice = o.dice;
  m.iou = o.iou;
  m.voe = o.voe;
  if (gt.count() > 0 && pred.count() > 0) m.hd = hausdorff(gt, pred);
  const PixelAccuracy pa = pixel_accuracy(gt, pred);
  m.pa = pa.pa;
  m.pa_c = pa.pa_c;
  return m;
}

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double iqr = 0.0;
  std::size_t count = 0;
};

/// Linear-interpolation quantile of sorted data.
inline double quantile_linear(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Mean, lower median and IQR (Q3 - Q1, linear quantiles). Empty input yields NaN statistics.
inline Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) {
    s.mean = s.median = s.iqr = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.median = values[(values.size() - 1) / 2];
  s.iqr = quantile_linear(values, 0.75) - quantile_linear(values, 0.25);
  return s;
}

inline constexpr const char* kMetricNames[] = {"dice", "hd", "iou", "pa", "pa_c", "voe"};

inline std::optional<double> metric_value(const ImageMetrics& m, std::string_view name) {
  if (name == "dice") return m.dice;
  if (name == "hd") return m.hd;
  if (name == "iou") return m.iou;
  if (name == "pa") return m.pa;
  if (name == "pa_c") return m.pa_c;
  if (name == "voe") return m.voe;
  throw UsageError("unknown metric '" + std::string(name) + "'");
}

struct MetricsReport {
  std::vector<ImageMetrics> images;
  std::vector<std::pair<std::string, Summary>> aggregates;  ///< in kMetricNames order

  const Summary& aggregate(std::string_view name) const {
    for (const auto& [n, s] : aggregates) {
      if (n == name) return s;
    }
    throw UsageError("unknown metric '" + std::string(name) + "'");
  }

  std::string to_csv() const {
    auto fmt = [](std::optional<double> v) { return v ? liplab::detail::format_double(*v) : std::string("NA"); };
    std::string out = "image";
    for (auto n : kMetricNames) out += std::string(",") + n;
    out += "\n";
    for (const auto& m : images) {
      out += m.image;
      for (auto n : kMetricNames) out += "," + fmt(metric_value(m, n));
      out += "\n";
    }
    return out;
  }

  std::string to_table() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "metric      mean      median    iqr       n\n";
    for (const auto& [name, s] : aggregates) {
      os << name << std::string(12 - name.size(), ' ') << s.mean << "    " << s.median << "    " << s.iqr << "    "
         << s.count << "\n";
    }
    return os.str();
  }
};

struct MaskPair {
  std::string name;
  BinaryMask gt;
  BinaryMask pred;
};

inline MetricsReport evaluate_report(const std::vector<MaskPair>& pairs) {
  if (pairs.empty()) throw UsageError("evaluate_report needs at least one mask pair");
  MetricsReport r;
  for (const auto& p : pairs) {
    try {
      r.images.push_back(evaluate_pair(p.name, p.gt, p.pred));
    } catch (const ShapeError& e) {
      throw ShapeError(p.name + ": " + e.what());
    }
  }
  for (auto name : kMetricNames) {
    std::vector<double> values;
    for (const auto& m : r.images) {
      if (auto v = metric_value(m, name)) values.push_back(*v);
    }
    r.aggregates.emplace_back(name, summarize(std::move(values)));
  }
  return r;
}

}  // namespace liplab::metrics
