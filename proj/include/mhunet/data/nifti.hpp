#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mhunet/data/file_io.hpp"
#include "mhunet/errors.hpp"

// Minimal NIfTI-1 reader/writer. Only the fields below are interpreted; all offsets are bytes
// from the start of the header, little-endian:
//
//   sizeof_hdr  i32     0   (must be 348)
//   dim         8 x i16 40
//   datatype    i16     70  (2 uint8, 4 int16, 16 float32, 64 float64)
//   bitpix      i16     72
//   pixdim      8 x f32 76
//   vox_offset  f32     108
//   scl_slope   f32     112
//   scl_inter   f32     116
//   magic       4 bytes 344 ("n+1\0" single file, "ni1\0" header/image pair)

namespace mhunet::data {

inline constexpr std::int32_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiMinimumOffset = 352;  // header plus the 4-byte extension flag

enum class NiftiType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, float64 = 64 };

inline std::size_t nifti_type_bytes(NiftiType t) {
  switch (t) {
    case NiftiType::uint8: return 1;
    case NiftiType::int16: return 2;
    case NiftiType::float32: return 4;
    case NiftiType::float64: return 8;
  }
  return 0;
}

inline bool is_supported_type(std::int16_t code) { return code == 2 || code == 4 || code == 16 || code == 64; }

struct Nifti1Header {
  std::int32_t sizeof_hdr = kNiftiHeaderSize;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = static_cast<std::int16_t>(NiftiType::float32);
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = static_cast<float>(kNiftiMinimumOffset);
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};

  bool single_file() const noexcept { return magic[1] == '+'; }
};

/// Scalar volume, x fastest: value(x, y, z) = data[x + nx * (y + ny * z)].
struct Volume {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel along x, y, z
  std::vector<double> data;                       // after scl_slope / scl_inter

  double at(std::size_t x, std::size_t y, std::size_t z) const { return data[x + nx * (y + ny * z)]; }
};

struct NiftiImage {
  Nifti1Header header;
  Volume volume;
};

namespace detail {

inline std::int16_t le_i16(const std::uint8_t* p) {
  return static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
}
inline std::uint32_t le_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint64_t le_u64(const std::uint8_t* p) { return le_u32(p) | std::uint64_t(le_u32(p + 4)) << 32; }
inline float le_f32(const std::uint8_t* p) { return std::bit_cast<float>(le_u32(p)); }

inline void put_i16(std::uint8_t* p, std::int16_t v) {
  const auto u = static_cast<std::uint16_t>(v);
  p[0] = static_cast<std::uint8_t>(u);
  p[1] = static_cast<std::uint8_t>(u >> 8);
}
inline void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline void put_f32(std::uint8_t* p, float v) { put_u32(p, std::bit_cast<std::uint32_t>(v)); }

inline double decode_voxel(const std::uint8_t* p, NiftiType t) {
  switch (t) {
    case NiftiType::uint8: return p[0];
    case NiftiType::int16: return le_i16(p);
    case NiftiType::float32: return le_f32(p);
    case NiftiType::float64: return std::bit_cast<double>(le_u64(p));
  }
  return 0;
}

inline void encode_voxel(std::uint8_t* p, NiftiType t, double v) {
  switch (t) {
    case NiftiType::uint8: p[0] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0)); break;
    case NiftiType::int16:
      put_i16(p, static_cast<std::int16_t>(std::clamp(std::nearbyint(v), -32768.0, 32767.0)));
      break;
    case NiftiType::float32: put_f32(p, static_cast<float>(v)); break;
    case NiftiType::float64: put_u64(p, std::bit_cast<std::uint64_t>(v)); break;
  }
}

inline double effective_slope(float s) { return s == 0.0f ? 1.0 : static_cast<double>(s); }

}  // namespace detail

/// Decodes the header fields; does not touch the voxel payload.
inline Nifti1Header parse_nifti1_header(const std::vector<std::uint8_t>& bytes) {
  using namespace detail;
  if (bytes.size() < static_cast<std::size_t>(kNiftiHeaderSize))
    throw ParseError("sizeof_hdr", "nifti: file shorter than the 348-byte header");
  const std::uint8_t* b = bytes.data();
  Nifti1Header h;
  h.sizeof_hdr = static_cast<std::int32_t>(le_u32(b));
  if (h.sizeof_hdr != kNiftiHeaderSize) {
    if (b[0] == 0 && b[1] == 0 && b[2] == 0x01 && b[3] == 0x5C)
      throw ParseError("endianness", "nifti: big-endian files are not supported");
    throw ParseError("sizeof_hdr", "nifti: sizeof_hdr is " + std::to_string(h.sizeof_hdr) + ", expected 348");
  }
  std::memcpy(h.magic.data(), b + 344, 4);
  const bool pair = std::memcmp(h.magic.data(), "ni1\0", 4) == 0;
  if (!pair && std::memcmp(h.magic.data(), "n+1\0", 4) != 0) throw ParseError("magic", "nifti: bad magic");

  for (int i = 0; i < 8; ++i) h.dim[i] = le_i16(b + 40 + 2 * i);
  if (h.dim[0] < 1 || h.dim[0] > 7)
    throw ParseError("dim", "nifti: dim[0] = " + std::to_string(h.dim[0]) + " outside [1,7]");
  for (int i = 1; i <= h.dim[0]; ++i)
    if (h.dim[i] < 1) throw ParseError("dim", "nifti: dim[" + std::to_string(i) + "] must be positive");
  for (int i = 4; i <= h.dim[0]; ++i)
    if (h.dim[i] != 1) throw ParseError("dim", "nifti: only 3-D scalar volumes are supported");

  h.datatype = le_i16(b + 70);
  if (!is_supported_type(h.datatype))
    throw ParseError("datatype", "nifti: unsupported datatype " + std::to_string(h.datatype));
  h.bitpix = le_i16(b + 72);
  if (static_cast<std::size_t>(h.bitpix) != 8 * nifti_type_bytes(static_cast<NiftiType>(h.datatype)))
    throw ParseError("bitpix", "nifti: bitpix " + std::to_string(h.bitpix) + " disagrees with datatype");

  for (int i = 0; i < 8; ++i) h.pixdim[i] = le_f32(b + 76 + 4 * i);
  for (int i = 1; i <= std::min<int>(h.dim[0], 3); ++i)
    if (!(std::isfinite(h.pixdim[i]) && h.pixdim[i] > 0))
      throw ParseError("pixdim", "nifti: pixdim[" + std::to_string(i) + "] must be positive and finite");

  h.vox_offset = le_f32(b + 108);
  const bool offset_ok = std::isfinite(h.vox_offset) && h.vox_offset >= 0 && h.vox_offset < 1e9f &&
                         std::floor(h.vox_offset) == h.vox_offset &&
                         (pair || h.vox_offset >= static_cast<float>(kNiftiMinimumOffset));
  if (!offset_ok) throw ParseError("vox_offset", "nifti: invalid vox_offset");

  h.scl_slope = le_f32(b + 112);
  h.scl_inter = le_f32(b + 116);
  if (!std::isfinite(h.scl_slope)) throw ParseError("scl_slope", "nifti: non-finite scl_slope");
  if (!std::isfinite(h.scl_inter)) throw ParseError("scl_inter", "nifti: non-finite scl_inter");
  return h;
}

/// Decodes header and voxels. For a single-file image the voxels start at vox_offset within
/// `bytes`; for a header/image pair they start at vox_offset within `image_bytes`.
inline NiftiImage parse_nifti1(const std::vector<std::uint8_t>& bytes,
                               const std::vector<std::uint8_t>* image_bytes = nullptr) {
  NiftiImage out;
  Nifti1Header& h = out.header;
  h = parse_nifti1_header(bytes);
  if (h.single_file() && bytes.size() < kNiftiMinimumOffset)
    throw ParseError("extension", "nifti: file shorter than 352 bytes");
  const std::vector<std::uint8_t>& payload = h.single_file() ? bytes : (image_bytes ? *image_bytes : bytes);
  if (!h.single_file() && !image_bytes)
    throw ParseError("magic", "nifti: header/image pair needs the separate image file");

  Volume& v = out.volume;
  auto extent = [&](int i) { return i <= h.dim[0] ? static_cast<std::size_t>(h.dim[i]) : std::size_t{1}; };
  v.nx = extent(1);
  v.ny = extent(2);
  v.nz = extent(3);
  for (int i = 0; i < 3; ++i) v.spacing[i] = i + 1 <= h.dim[0] ? static_cast<double>(h.pixdim[i + 1]) : 1.0;

  const auto type = static_cast<NiftiType>(h.datatype);
  const std::size_t width = nifti_type_bytes(type);
  const std::size_t count = v.nx * v.ny * v.nz;  // at most 32767^3, no overflow in 64 bits
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset > payload.size() || (payload.size() - offset) / width < count)
    throw ParseError("payload", "nifti: truncated payload (" + std::to_string(count) + " voxels declared)");

  const double slope = detail::effective_slope(h.scl_slope), inter = h.scl_inter;
  v.data.resize(count);
  const std::uint8_t* p = payload.data() + offset;
  for (std::size_t i = 0; i < count; ++i) v.data[i] = detail::decode_voxel(p + i * width, type) * slope + inter;
  return out;
}

/// Encodes the interpreted fields (everything else zero) followed by the voxels, converted back
/// through the inverse intensity scaling into `header.datatype`. Always a single-file image.
inline std::vector<std::uint8_t> write_nifti1(const Nifti1Header& header, const Volume& v) {
  using namespace detail;
  if (!is_supported_type(header.datatype))
    throw ContractError("write_nifti1: unsupported datatype " + std::to_string(header.datatype));
  if (v.data.size() != v.nx * v.ny * v.nz) throw DimensionError("write_nifti1: data length disagrees with extents");
  if (v.nx > 32767 || v.ny > 32767 || v.nz > 32767) throw DimensionError("write_nifti1: extent exceeds 32767");
  const auto type = static_cast<NiftiType>(header.datatype);
  const std::size_t width = nifti_type_bytes(type);
  const std::size_t offset = std::max<std::size_t>(
      kNiftiMinimumOffset, std::isfinite(header.vox_offset) && header.vox_offset > 0
                               ? static_cast<std::size_t>(header.vox_offset)
                               : std::size_t{0});

  std::vector<std::uint8_t> out(offset + v.data.size() * width, 0);
  std::uint8_t* b = out.data();
  put_u32(b, kNiftiHeaderSize);
  const std::int16_t rank = v.nz > 1 ? 3 : (v.ny > 1 ? 2 : 1);
  const std::int16_t ndim = std::max(rank, header.dim[0] >= 1 && header.dim[0] <= 3 ? header.dim[0] : rank);
  std::array<std::int16_t, 8> dim{ndim, static_cast<std::int16_t>(v.nx), static_cast<std::int16_t>(v.ny),
                                  static_cast<std::int16_t>(v.nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_i16(b + 40 + 2 * i, dim[i]);
  put_i16(b + 70, header.datatype);
  put_i16(b + 72, static_cast<std::int16_t>(8 * width));
  std::array<float, 8> pixdim = header.pixdim;
  for (int i = 0; i < 3; ++i) pixdim[i + 1] = static_cast<float>(v.spacing[i]);
  for (int i = 0; i < 8; ++i) put_f32(b + 76 + 4 * i, pixdim[i]);
  put_f32(b + 108, static_cast<float>(offset));
  put_f32(b + 112, header.scl_slope);
  put_f32(b + 116, header.scl_inter);
  std::memcpy(b + 344, "n+1\0", 4);

  const double slope = effective_slope(header.scl_slope), inter = header.scl_inter;
  for (std::size_t i = 0; i < v.data.size(); ++i) encode_voxel(b + offset + i * width, type, (v.data[i] - inter) / slope);
  return out;
}

/// Loads a .nii file, or a .hdr whose voxels live in the sibling .img file.
/// Compressed .nii.gz files must be decompressed first.
inline NiftiImage load_nifti(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (path.extension() == ".hdr") {
    auto img = path;
    img.replace_extension(".img");
    const auto image_bytes = read_file_bytes(img);
    return parse_nifti1(bytes, &image_bytes);
  }
  return parse_nifti1(bytes);
}

}  // namespace mhunet::data
