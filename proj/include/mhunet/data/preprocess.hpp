#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mhunet/data/nifti.hpp"
#include "mhunet/errors.hpp"
#include "mhunet/numeric/random.hpp"
#include "mhunet/segmask.hpp"

namespace mhunet::data {

/// Row-major 2-D slice with physical pixel spacing.
struct Image2D {
  std::size_t height = 0, width = 0;
  std::vector<double> data;
  double row_spacing = 1.0, col_spacing = 1.0;

  Image2D() = default;
  Image2D(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}
  Image2D(std::size_t h, std::size_t w, std::vector<double> values) : height(h), width(w), data(std::move(values)) {
    if (data.size() != h * w) throw DimensionError("Image2D: value count does not match extents");
  }

  double at(std::size_t i, std::size_t j) const { return data[i * width + j]; }
  double& at(std::size_t i, std::size_t j) { return data[i * width + j]; }
  std::size_t size() const noexcept { return data.size(); }
};

enum class SliceAxis { axial, coronal, sagittal };

inline const char* axis_name(SliceAxis a) {
  switch (a) {
    case SliceAxis::axial: return "axial";
    case SliceAxis::coronal: return "coronal";
    case SliceAxis::sagittal: return "sagittal";
  }
  return "?";
}

inline SliceAxis parse_axis(const std::string& s) {
  if (s == "axial") return SliceAxis::axial;
  if (s == "coronal") return SliceAxis::coronal;
  if (s == "sagittal") return SliceAxis::sagittal;
  throw ConfigError("unknown slice axis '" + s + "' (expected axial, coronal or sagittal)");
}

/// Planes of constant index along the chosen axis, in index order. Axial planes (constant z)
/// have rows along y and columns along x, so each is a contiguous run of the volume data.
inline std::vector<Image2D> slice_volume(const Volume& v, SliceAxis axis = SliceAxis::axial) {
  std::vector<Image2D> out;
  switch (axis) {
    case SliceAxis::axial:
      for (std::size_t z = 0; z < v.nz; ++z) {
        Image2D s(v.ny, v.nx);
        std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(z * v.nx * v.ny), v.nx * v.ny, s.data.begin());
        s.row_spacing = v.spacing[1];
        s.col_spacing = v.spacing[0];
        out.push_back(std::move(s));
      }
      break;
    case SliceAxis::coronal:  // constant y: rows z, columns x
      for (std::size_t y = 0; y < v.ny; ++y) {
        Image2D s(v.nz, v.nx);
        for (std::size_t z = 0; z < v.nz; ++z)
          for (std::size_t x = 0; x < v.nx; ++x) s.at(z, x) = v.at(x, y, z);
        s.row_spacing = v.spacing[2];
        s.col_spacing = v.spacing[0];
        out.push_back(std::move(s));
      }
      break;
    case SliceAxis::sagittal:  // constant x: rows z, columns y
      for (std::size_t x = 0; x < v.nx; ++x) {
        Image2D s(v.nz, v.ny);
        for (std::size_t z = 0; z < v.nz; ++z)
          for (std::size_t y = 0; y < v.ny; ++y) s.at(z, y) = v.at(x, y, z);
        s.row_spacing = v.spacing[2];
        s.col_spacing = v.spacing[1];
        out.push_back(std::move(s));
      }
      break;
  }
  return out;
}

inline std::vector<Image2D> slice_axial(const Volume& v) { return slice_volume(v, SliceAxis::axial); }

/// Binary mask from a label slice: any value > 0.5 is foreground.
inline SegMask binarize(const Image2D& s) {
  SegMask m(s.height, s.width);
  for (std::size_t i = 0; i < s.size(); ++i) m.labels[i] = s.data[i] > 0.5;
  return m;
}

namespace detail {

/// Half-pixel source coordinate of output index `o` when mapping `in` samples to `out`.
inline double source_coord(std::size_t o, std::size_t in, std::size_t out) {
  return (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
}

inline std::size_t nearest_source(std::size_t o, std::size_t in, std::size_t out) {
  const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                                                     static_cast<double>(out)));
  return std::min(s, in - 1);
}

}  // namespace detail

/// Bilinear resampling with pixel centers at half-integers (align-corners off); sample
/// coordinates outside the image clamp to the edge. Spacing scales with the extent change.
inline Image2D resize_bilinear(const Image2D& in, std::size_t out_h = 256, std::size_t out_w = 256) {
  if (in.height == 0 || in.width == 0 || out_h == 0 || out_w == 0)
    throw DimensionError("resize_bilinear: extents must be positive");
  Image2D out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double y = std::clamp(detail::source_coord(i, in.height, out_h), 0.0, double(in.height - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, in.height - 1);
    const double fy = y - double(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double x = std::clamp(detail::source_coord(j, in.width, out_w), 0.0, double(in.width - 1));
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, in.width - 1);
      const double fx = x - double(x0);
      const double top = in.at(y0, x0) + fx * (in.at(y0, x1) - in.at(y0, x0));
      const double bottom = in.at(y1, x0) + fx * (in.at(y1, x1) - in.at(y1, x0));
      out.at(i, j) = top + fy * (bottom - top);
    }
  }
  out.row_spacing = in.row_spacing * double(in.height) / double(out_h);
  out.col_spacing = in.col_spacing * double(in.width) / double(out_w);
  return out;
}

/// Nearest-neighbour resampling for label masks (same half-pixel convention).
inline SegMask resize_nearest(const SegMask& in, std::size_t out_h = 256, std::size_t out_w = 256) {
  if (in.height == 0 || in.width == 0 || out_h == 0 || out_w == 0)
    throw DimensionError("resize_nearest: extents must be positive");
  SegMask out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t si = detail::nearest_source(i, in.height, out_h);
    for (std::size_t j = 0; j < out_w; ++j) out.at(i, j) = in.at(si, detail::nearest_source(j, in.width, out_w));
  }
  return out;
}

/// Box mean over the (2r+1)^2 window, with edge pixels replicated.
inline Image2D box_blur(const Image2D& in, std::size_t radius = 1) {
  Image2D out = in;
  const auto H = static_cast<std::ptrdiff_t>(in.height), W = static_cast<std::ptrdiff_t>(in.width);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const double norm = 1.0 / double((2 * r + 1) * (2 * r + 1));
  for (std::ptrdiff_t i = 0; i < H; ++i)
    for (std::ptrdiff_t j = 0; j < W; ++j) {
      double acc = 0;
      for (std::ptrdiff_t di = -r; di <= r; ++di)
        for (std::ptrdiff_t dj = -r; dj <= r; ++dj)
          acc += in.at(static_cast<std::size_t>(std::clamp(i + di, std::ptrdiff_t{0}, H - 1)),
                       static_cast<std::size_t>(std::clamp(j + dj, std::ptrdiff_t{0}, W - 1)));
      out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc * norm;
    }
  return out;
}

/// Unsharp masking: in + amount * (in - box_blur(in)), clamped to the input's value range.
inline Image2D sharpen_unsharp(const Image2D& in, double amount = 0.5, std::size_t radius = 1) {
  if (!(amount >= 0)) throw ContractError("sharpen_unsharp: amount must be non-negative");
  if (in.size() == 0 || amount == 0) return in;
  const auto [lo, hi] = std::minmax_element(in.data.begin(), in.data.end());
  const double mn = *lo, mx = *hi;
  const Image2D blur = box_blur(in, radius);
  Image2D out = in;
  for (std::size_t i = 0; i < in.size(); ++i)
    out.data[i] = std::clamp(in.data[i] + amount * (in.data[i] - blur.data[i]), mn, mx);
  return out;
}

/// Order statistic at 0-based sorted index ceil(q * (m - 1)) of m values.
inline double percentile_higher(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile: empty sample");
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size() - 1)));
  const auto k = std::min(idx, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

/// Clips to the [1st, 99th] percentile and maps that range affinely onto [0, 1]; a slice whose
/// percentiles coincide maps to zeros.
inline Image2D normalize_intensity(const Image2D& in) {
  Image2D out = in;
  if (in.size() == 0) return out;
  const double p1 = percentile_higher(in.data, 0.01), p99 = percentile_higher(in.data, 0.99);
  if (!(p99 > p1)) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
    return out;
  }
  for (auto& v : out.data) v = (std::clamp(v, p1, p99) - p1) / (p99 - p1);
  return out;
}

struct PreprocessOptions {
  std::size_t extent = 256;
  double sharpen_amount = 0.5;
  std::size_t sharpen_radius = 1;
  SliceAxis axis = SliceAxis::axial;
};

/// Resize, sharpen, normalize.
inline Image2D preprocess_slice(const Image2D& raw, const PreprocessOptions& opt = {}) {
  return normalize_intensity(
      sharpen_unsharp(resize_bilinear(raw, opt.extent, opt.extent), opt.sharpen_amount, opt.sharpen_radius));
}

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  std::uint64_t seed = 0;
};

/// Patient-level 70/15/15 split. Ids are sorted, then shuffled with RandomSource(seed);
/// validation and test each take round(0.15 n) patients (at least one), training takes the rest.
inline DatasetSplit split_patients(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ContractError("split_patients: duplicate patient id");
  if (ids.size() < 3) throw ContractError("split_patients: need at least 3 patients, got " + std::to_string(ids.size()));
  RandomSource rng(seed);
  rng.shuffle(ids);
  const std::size_t n = ids.size();
  const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.15 * double(n))));
  const std::size_t n_train = n - 2 * held;
  DatasetSplit s;
  s.seed = seed;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + held));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + held), ids.end());
  return s;
}

}  // namespace mhunet::data
