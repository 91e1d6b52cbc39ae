#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mhunet/byte_stream.hpp"
#include "mhunet/data/file_io.hpp"
#include "mhunet/data/preprocess.hpp"
#include "mhunet/errors.hpp"
#include "mhunet/numeric/random.hpp"
#include "mhunet/segmask.hpp"

namespace mhunet::data {

struct SliceRecord {
  std::string patient;
  std::uint32_t slice_index = 0;
  Image2D image;
  std::optional<SegMask> mask;
  std::string source;  // originating file
  std::string axis = "axial";

  friend bool operator==(const SliceRecord& a, const SliceRecord& b) {
    return a.patient == b.patient && a.slice_index == b.slice_index && a.image.height == b.image.height &&
           a.image.width == b.image.width && a.image.data == b.image.data &&
           a.image.row_spacing == b.image.row_spacing && a.image.col_spacing == b.image.col_spacing &&
           a.mask == b.mask && a.source == b.source && a.axis == b.axis;
  }
};

// Slice file, little-endian:
//   "MHSL" | u32 version | str patient | u32 slice index | str source | str axis
//   u32 height | u32 width | f64 row spacing | f64 col spacing | f64 x height*width
//   u8 has_mask | (u8 x height*width when has_mask)
// where str is u32 length followed by the bytes.
inline constexpr std::uint32_t kSliceVersion = 1;

inline std::vector<std::uint8_t> encode_slice(const SliceRecord& r) {
  ByteWriter w;
  auto str = [&](const std::string& s) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.raw(s);
  };
  w.raw("MHSL");
  w.u32(kSliceVersion);
  str(r.patient);
  w.u32(r.slice_index);
  str(r.source);
  str(r.axis);
  w.u32(static_cast<std::uint32_t>(r.image.height));
  w.u32(static_cast<std::uint32_t>(r.image.width));
  w.f64(r.image.row_spacing);
  w.f64(r.image.col_spacing);
  for (double v : r.image.data) w.f64(v);
  w.u8(r.mask ? 1 : 0);
  if (r.mask) {
    if (r.mask->height != r.image.height || r.mask->width != r.image.width)
      throw DimensionError("encode_slice: mask extents differ from image extents");
    for (auto v : r.mask->labels) w.u8(v);
  }
  return std::move(w.bytes());
}

inline SliceRecord decode_slice(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "slice");
  auto str = [&](const char* field) {
    const auto n = r.u32(field);
    return r.raw(n, field);
  };
  if (r.raw(4, "magic") != "MHSL") throw ParseError("magic", "slice: bad magic (expected MHSL)");
  if (r.u32("version") != kSliceVersion) throw ParseError("version", "slice: unsupported version");
  SliceRecord s;
  s.patient = str("patient");
  s.slice_index = r.u32("slice_index");
  s.source = str("source");
  s.axis = str("axis");
  const std::size_t h = r.u32("height"), w = r.u32("width");
  if (r.remaining() / 8 < h * w + 2) throw ParseError("image", "slice: image payload truncated");
  s.image = Image2D(h, w);
  s.image.row_spacing = r.f64("row_spacing");
  s.image.col_spacing = r.f64("col_spacing");
  for (auto& v : s.image.data) v = r.f64("image");
  const auto has_mask = r.u8("has_mask");
  if (has_mask > 1) throw ParseError("has_mask", "slice: has_mask must be 0 or 1");
  if (has_mask) {
    std::vector<std::uint8_t> labels(h * w);
    for (auto& v : labels) {
      v = r.u8("mask");
      if (v > 1) throw ParseError("mask", "slice: mask labels must be 0 or 1");
    }
    s.mask = SegMask(h, w, std::move(labels));
  }
  if (!r.at_end()) throw ParseError("trailer", "slice: trailing bytes");
  return s;
}

inline std::filesystem::path slice_path(const std::filesystem::path& root, const std::string& patient,
                                        std::uint32_t index) {
  return root / patient / (std::to_string(index) + ".bin");
}

inline void save_slice(const std::filesystem::path& root, const SliceRecord& r) {
  std::filesystem::create_directories(root / r.patient);
  write_file_bytes(slice_path(root, r.patient, r.slice_index), encode_slice(r));
}

inline SliceRecord load_slice(const std::filesystem::path& path) { return decode_slice(read_file_bytes(path)); }

/// One line per patient: id, slice count, split name.
struct ManifestEntry {
  std::string patient;
  std::uint32_t slices = 0;
  std::string split;  // train | val | test

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kManifestHeader = "patient\tslices\tsplit";

/// Entries sorted by patient id, after a header line.
inline std::string format_manifest(std::vector<ManifestEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.patient < b.patient; });
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& e : entries) out += e.patient + "\t" + std::to_string(e.slices) + "\t" + e.split + "\n";
  return out;
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ParseError("header", "manifest: missing header line");
  std::vector<ManifestEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (cols.size() != 3) throw ParseError("columns", where + ": expected 3 tab-separated columns");
    if (cols[2] != "train" && cols[2] != "val" && cols[2] != "test")
      throw ParseError("split", where + ": unknown split '" + cols[2] + "'");
    if (cols[0].empty() || cols[0].find('/') != std::string::npos || cols[0] == "." || cols[0] == "..")
      throw ParseError("patient", where + ": invalid patient id");
    std::uint32_t n = 0;
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(cols[1], &used);
      if (used != cols[1].size() || v > 0xFFFFFFFFul) throw std::out_of_range("slices");
      n = static_cast<std::uint32_t>(v);
    } catch (const std::logic_error&) {
      throw ParseError("slices", where + ": slice count is not a non-negative integer");
    }
    out.push_back({cols[0], n, cols[2]});
  }
  return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& root) {
  const auto bytes = read_file_bytes(root / kManifestName);
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

/// All slices of the patients assigned to `split`, in manifest order then slice order.
inline std::vector<SliceRecord> load_split(const std::filesystem::path& root, const std::string& split) {
  std::vector<SliceRecord> out;
  for (const auto& e : load_manifest(root)) {
    if (e.split != split) continue;
    for (std::uint32_t i = 0; i < e.slices; ++i) out.push_back(load_slice(slice_path(root, e.patient, i)));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Synthetic data: noisy images with bright elliptical "lesions" on a smooth background.

struct EllipseOptions {
  std::size_t extent = 64;
  std::size_t min_lesions = 1, max_lesions = 3;
  double min_axis = 3.0, max_axis = 10.0;  // semi-axis range in pixels
  double contrast = 0.5;                   // lesion intensity above the background
  double noise = 0.08;                     // Gaussian noise standard deviation
};

struct SyntheticSlice {
  Image2D image;
  SegMask mask;
};

inline SyntheticSlice generate_ellipse_slice(RandomSource& rng, const EllipseOptions& opt = {}) {
  const std::size_t n = opt.extent;
  SyntheticSlice s{Image2D(n, n), SegMask(n, n)};
  // Low-frequency background: a random plane plus one gentle sinusoid.
  const double base = rng.uniform(0.15, 0.3), gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  const double freq = rng.uniform(1.0, 3.0), phase = rng.uniform(0.0, 2 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double u = double(i) / double(n), v = double(j) / double(n);
      s.image.at(i, j) = base + gx * u + gy * v + 0.05 * std::sin(2 * std::numbers::pi * freq * (u + v) + phase);
    }
  const std::size_t lesions = opt.min_lesions + rng.below(opt.max_lesions - opt.min_lesions + 1);
  for (std::size_t k = 0; k < lesions; ++k) {
    const double a = rng.uniform(opt.min_axis, opt.max_axis), b = rng.uniform(opt.min_axis, opt.max_axis);
    const double margin = std::max(a, b) + 1;
    const double cy = rng.uniform(margin, double(n) - 1 - margin), cx = rng.uniform(margin, double(n) - 1 - margin);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double c = std::cos(theta), sn = std::sin(theta);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double dy = double(i) - cy, dx = double(j) - cx;
        const double p = (c * dx + sn * dy) / a, q = (-sn * dx + c * dy) / b;
        if (p * p + q * q <= 1.0) s.mask.at(i, j) = 1;
      }
  }
  for (std::size_t i = 0; i < s.image.size(); ++i)
    s.image.data[i] += opt.contrast * s.mask.labels[i] + opt.noise * rng.normal();
  return s;
}

/// A synthetic "patient": `slices` ellipse images stacked along z as image and label volumes.
struct SyntheticVolume {
  Volume image, labels;
};

inline SyntheticVolume generate_ellipse_volume(RandomSource& rng, std::size_t slices, const EllipseOptions& opt = {}) {
  SyntheticVolume v;
  for (Volume* vol : {&v.image, &v.labels}) {
    vol->nx = vol->ny = opt.extent;
    vol->nz = slices;
    vol->spacing = {1.0, 1.0, 1.0};
  }
  for (std::size_t z = 0; z < slices; ++z) {
    auto s = generate_ellipse_slice(rng, opt);
    v.image.data.insert(v.image.data.end(), s.image.data.begin(), s.image.data.end());
    for (auto l : s.mask.labels) v.labels.data.push_back(l);
  }
  return v;
}

}  // namespace mhunet::data
