#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mhunet/data/file_io.hpp"
#include "mhunet/errors.hpp"
#include "mhunet/segmask.hpp"

namespace mhunet::data {

/// 8-bit grayscale PNG, foreground 255 and background 0.
inline std::vector<std::uint8_t> encode_png_mask(const SegMask& mask) {
  if (mask.height == 0 || mask.width == 0) throw DimensionError("encode_png_mask: empty mask");
  std::vector<std::uint8_t> pixels(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) pixels[i] = mask.labels[i] ? 255 : 0;
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(mask.width);
  image.height = static_cast<png_uint_32>(mask.height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + image.message);
  out.resize(size);
  return out;
}

/// Inverse of encode_png_mask: pixels >= 128 are foreground. Colour or alpha images are rejected.
inline SegMask decode_png_mask(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode failed: ") + image.message);
  if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    throw IoError("png mask must be single-channel grayscale");
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr))
    throw IoError(std::string("png decode failed: ") + image.message);
  SegMask m(image.height, image.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = pixels[i] >= 128;
  return m;
}

inline void write_png_mask(const SegMask& mask, const std::filesystem::path& path) {
  write_file_bytes(path, encode_png_mask(mask));
}

inline SegMask read_png_mask(const std::filesystem::path& path) { return decode_png_mask(read_file_bytes(path)); }

}  // namespace mhunet::data
