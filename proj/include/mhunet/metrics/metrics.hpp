#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mhunet/errors.hpp"
#include "mhunet/segmask.hpp"

namespace mhunet::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline void require_same_extent(const SegMask& a, const SegMask& b, const char* who) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError(std::string(who) + ": mask extents " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + " differ");
}

inline ConfusionCounts confusion(const SegMask& pred, const SegMask& gt) {
  require_same_extent(pred, gt, "confusion");
  // Index 2*pred + gt: 0 = tn, 1 = fn, 2 = fp, 3 = tp.
  std::uint64_t bins[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < pred.labels.size(); ++i) ++bins[2 * pred.labels[i] + gt.labels[i]];
  return ConfusionCounts{bins[3], bins[2], bins[1], bins[0]};
}

// Ratios are std::nullopt when their denominator is zero.

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline std::optional<double> iou(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn); }
inline std::optional<double> dsc(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
inline std::optional<double> sensitivity(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
inline std::optional<double> specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }

struct Point {
  std::int64_t row = 0, col = 0;
  friend auto operator<=>(const Point&, const Point&) = default;
};

enum class SurfaceMode {
  boundary,  // foreground pixels with a background or out-of-bounds 4-neighbor
  all,       // every foreground pixel
};

/// Points in row-major order.
inline std::vector<Point> boundary_points(const SegMask& m, SurfaceMode mode = SurfaceMode::boundary) {
  std::vector<Point> pts;
  const auto H = static_cast<std::int64_t>(m.height), W = static_cast<std::int64_t>(m.width);
  auto fg = [&](std::int64_t i, std::int64_t j) {
    return i >= 0 && j >= 0 && i < H && j < W && m.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  };
  for (std::int64_t i = 0; i < H; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      if (!fg(i, j)) continue;
      if (mode == SurfaceMode::all || !fg(i - 1, j) || !fg(i + 1, j) || !fg(i, j - 1) || !fg(i, j + 1))
        pts.push_back({i, j});
    }
  }
  return pts;
}

/// Physical size of one pixel step along rows and columns.
struct Spacing {
  double row = 1.0;
  double col = 1.0;
};

inline double squared_distance(const Point& a, const Point& b, const Spacing& s) {
  const double dy = static_cast<double>(a.row - b.row) * s.row;
  const double dx = static_cast<double>(a.col - b.col) * s.col;
  return dy * dy + dx * dx;
}

/// Nearest-rank percentile: the ceil(q*m)-th smallest value (1-based), m = values.size() > 0.
inline double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("nearest_rank: empty sample");
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

/// For each point of `from`, the distance to its nearest neighbour in `to` (non-empty).
/// Targets are bucketed by row; rows are visited outward from the query's row until the
/// row gap alone exceeds the best distance, and within a row only the two columns bracketing
/// the query can be nearest. The result equals the all-pairs minimum exactly.
inline std::vector<double> nearest_distances(const std::vector<Point>& from, const std::vector<Point>& to,
                                             const Spacing& s = {}) {
  if (to.empty()) throw ContractError("nearest_distances: empty target set");
  std::int64_t lo = to.front().row, hi = to.front().row;
  for (const auto& p : to) lo = std::min(lo, p.row), hi = std::max(hi, p.row);
  std::vector<std::vector<std::int64_t>> rows(static_cast<std::size_t>(hi - lo + 1));
  for (const auto& p : to) rows[static_cast<std::size_t>(p.row - lo)].push_back(p.col);
  for (auto& r : rows) std::sort(r.begin(), r.end());

  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& a : from) {
    double best = INFINITY;
    auto visit = [&](std::int64_t row) {
      const auto& cols = rows[static_cast<std::size_t>(row - lo)];
      if (cols.empty()) return;
      auto it = std::lower_bound(cols.begin(), cols.end(), a.col);
      if (it != cols.end()) best = std::min(best, squared_distance(a, {row, *it}, s));
      if (it != cols.begin()) best = std::min(best, squared_distance(a, {row, *std::prev(it)}, s));
    };
    const std::int64_t start = std::clamp(a.row, lo, hi);
    for (std::int64_t gap = 0;; ++gap) {
      const std::int64_t up = start - gap, down = start + gap;
      if (up < lo && down > hi) break;
      // Rows at least this far from the query cannot beat `best`.
      const double row_gap = static_cast<double>(std::min(std::llabs(up - a.row), std::llabs(down - a.row))) * s.row;
      if (row_gap * row_gap > best) break;
      if (up >= lo) visit(up);
      if (gap > 0 && down <= hi) visit(down);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

/// 95th-percentile (nearest-rank) distance from the points of `a` to the set `b`.
inline std::optional<double> hd95_directed(const SegMask& a, const SegMask& b, std::optional<Spacing> spacing = {},
                                           SurfaceMode mode = SurfaceMode::boundary) {
  require_same_extent(a, b, "hd95");
  const auto pa = boundary_points(a, mode), pb = boundary_points(b, mode);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return std::nullopt;
  return nearest_rank(nearest_distances(pa, pb, spacing.value_or(Spacing{})), 0.95);
}

/// Symmetric HD95: max of the two directed values. Both masks empty gives 0; exactly one
/// empty is undefined.
inline std::optional<double> hd95(const SegMask& a, const SegMask& b, std::optional<Spacing> spacing = {},
                                  SurfaceMode mode = SurfaceMode::boundary) {
  const auto ab = hd95_directed(a, b, spacing, mode);
  if (!ab) return std::nullopt;
  return std::max(*ab, *hd95_directed(b, a, spacing, mode));
}

struct MetricsReport {
  std::optional<double> iou, dsc, hd95, sensitivity, specificity;
};

inline constexpr const char* kMetricNames[5] = {"iou", "dsc", "hd95", "sensitivity", "specificity"};

inline std::optional<double> metric_at(const MetricsReport& r, std::size_t k) {
  switch (k) {
    case 0: return r.iou;
    case 1: return r.dsc;
    case 2: return r.hd95;
    case 3: return r.sensitivity;
    default: return r.specificity;
  }
}

inline MetricsReport evaluate(const SegMask& pred, const SegMask& gt, std::optional<Spacing> spacing = {}) {
  const auto c = confusion(pred, gt);
  return MetricsReport{iou(c), dsc(c), hd95(pred, gt, spacing), sensitivity(c), specificity(c)};
}

struct MetricSummary {
  std::optional<double> mean, stddev;  // population standard deviation
  std::size_t excluded = 0;            // reports where the metric was undefined
};

struct Summary {
  std::size_t n = 0;
  MetricSummary metric[5];
};

/// Per-metric mean and standard deviation over the defined values, in list order.
inline Summary aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("aggregate: no reports");
  Summary s;
  s.n = reports.size();
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> v;
    for (const auto& r : reports) {
      if (auto x = metric_at(r, k))
        v.push_back(*x);
      else
        ++s.metric[k].excluded;
    }
    if (v.empty()) continue;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    s.metric[k].mean = mean;
    s.metric[k].stddev = std::sqrt(var / static_cast<double>(v.size()));
  }
  return s;
}

using Json = nlohmann::ordered_json;

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

/// {"iou", "dsc", "hd95", "sensitivity", "specificity", "n": 1, "excluded": count of nulls}
inline Json to_json(const MetricsReport& r) {
  Json j;
  std::size_t excluded = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto v = metric_at(r, k);
    excluded += !v;
    j[kMetricNames[k]] = optional_json(v);
  }
  j["n"] = 1;
  j["excluded"] = excluded;
  return j;
}

/// Means under the metric keys, then "std", "n", and per-metric "excluded" counts.
inline Json to_json(const Summary& s) {
  Json j, sd, ex;
  for (std::size_t k = 0; k < 5; ++k) {
    j[kMetricNames[k]] = optional_json(s.metric[k].mean);
    sd[kMetricNames[k]] = optional_json(s.metric[k].stddev);
    ex[kMetricNames[k]] = s.metric[k].excluded;
  }
  j["std"] = sd;
  j["n"] = s.n;
  j["excluded"] = ex;
  return j;
}

}  // namespace mhunet::metrics
