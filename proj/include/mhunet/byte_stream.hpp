#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "mhunet/errors.hpp"

namespace mhunet {

// Little-endian encoders shared by the binary container formats.

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::string context) : b_(b), context_(std::move(context)) {}

  std::uint8_t u8(const char* field) {
    need(1, field);
    return b_[pos_++];
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b_[pos_++]) << (8 * i);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  std::string raw(std::size_t n, const char* field) {
    need(n, field);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const noexcept { return pos_ == b_.size(); }
  std::size_t remaining() const noexcept { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (b_.size() - pos_ < n) throw ParseError(field, context_ + " truncated in " + field);
  }
  const std::vector<std::uint8_t>& b_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace mhunet
