#pragma once

// Brute-force references for the metrics module: direct pixel enumeration and all-pairs
// nearest neighbours, written independently of the library's fast paths.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mhunet/metrics/metrics.hpp"
#include "mhunet/numeric/random.hpp"

namespace mhunet::testing {

/// Random mask with extents in [1, max_extent] and a random foreground density; a fifth of
/// the masks are sparse so that empty and single-pixel cases occur.
inline SegMask random_mask(RandomSource& rng, std::size_t h, std::size_t w) {
  const double density = rng.below(5) == 0 ? 0.02 * rng.uniform() : rng.uniform();
  SegMask m(h, w);
  for (auto& v : m.labels) v = rng.uniform() < density;
  return m;
}

struct OracleCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline OracleCounts oracle_counts(const SegMask& p, const SegMask& g) {
  OracleCounts c;
  for (std::size_t i = 0; i < p.height; ++i)
    for (std::size_t j = 0; j < p.width; ++j) {
      const bool a = p.at(i, j), b = g.at(i, j);
      if (a && b) ++c.tp;
      else if (a) ++c.fp;
      else if (b) ++c.fn;
      else ++c.tn;
    }
  return c;
}

inline std::vector<metrics::Point> oracle_boundary(const SegMask& m) {
  std::vector<metrics::Point> pts;
  const long H = static_cast<long>(m.height), W = static_cast<long>(m.width);
  const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      if (!m.at(i, j)) continue;
      bool edge = false;
      for (int k = 0; k < 4; ++k) {
        const long a = i + di[k], b = j + dj[k];
        if (a < 0 || b < 0 || a >= H || b >= W || !m.at(a, b)) edge = true;
      }
      if (edge) pts.push_back({i, j});
    }
  return pts;
}

inline std::optional<double> oracle_directed(const std::vector<metrics::Point>& a,
                                             const std::vector<metrics::Point>& b, const metrics::Spacing& s) {
  std::vector<double> d;
  for (const auto& p : a) {
    double best = INFINITY;
    for (const auto& q : b) best = std::min(best, std::sqrt(metrics::squared_distance(p, q, s)));
    d.push_back(best);
  }
  std::sort(d.begin(), d.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

inline std::optional<double> oracle_hd95(const SegMask& x, const SegMask& y, const metrics::Spacing& s = {}) {
  const auto a = oracle_boundary(x), b = oracle_boundary(y);
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return std::nullopt;
  return std::max(*oracle_directed(a, b, s), *oracle_directed(b, a, s));
}

}  // namespace mhunet::testing
