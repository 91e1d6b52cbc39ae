#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "mhunet/data/nifti.hpp"
#include "mhunet/numeric/random.hpp"

namespace mhunet::testing {

// Hand-assembled single-file NIfTI-1 image: 4x3x2 int16 voxels with slope 2, intercept -1,
// spacing (0.9, 0.8, 2.5), unused dims set to 1.
inline std::vector<std::uint8_t> int16_fixture() {
  std::vector<std::uint8_t> b(352 + 24 * 2, 0);
  auto i16 = [&](std::size_t off, int v) {
    b[off] = static_cast<std::uint8_t>(v & 0xFF);
    b[off + 1] = static_cast<std::uint8_t>((v >> 8) & 0xFF);
  };
  auto f32 = [&](std::size_t off, float v) { std::memcpy(&b[off], &v, 4); };
  b[0] = 0x5C;
  b[1] = 0x01;  // 348
  const int dim[8] = {3, 4, 3, 2, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) i16(40 + 2 * i, dim[i]);
  i16(70, 4);
  i16(72, 16);
  const float pix[8] = {0, 0.9f, 0.8f, 2.5f, 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) f32(76 + 4 * i, pix[i]);
  f32(108, 352.0f);
  f32(112, 2.0f);
  f32(116, -1.0f);
  std::memcpy(&b[344], "n+1\0", 4);
  for (int k = 0; k < 24; ++k) i16(352 + 2 * k, k * 37 - 300);
  return b;
}

struct FuzzTally {
  std::size_t parsed = 0, parse_errors = 0, other_failures = 0;
};

/// Feeds `count` hostile inputs to parse_nifti1: half uniformly random byte strings, half
/// mutated (and sometimes truncated) copies of the fixture. Anything other than success or a
/// ParseError counts as a failure, as does a volume whose data length disagrees with its extents.
inline FuzzTally fuzz_nifti(std::uint64_t seed, std::size_t count) {
  RandomSource rng(seed);
  const auto fixture = int16_fixture();
  FuzzTally tally;
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<std::uint8_t> b;
    if (t % 2 == 0) {
      b.resize(rng.below(1200));
      for (auto& x : b) x = static_cast<std::uint8_t>(rng.next_u64());
    } else {
      b = fixture;
      const auto flips = 1 + rng.below(8);
      for (std::uint64_t k = 0; k < flips; ++k) b[rng.below(b.size())] = static_cast<std::uint8_t>(rng.next_u64());
      if (rng.below(4) == 0) b.resize(rng.below(b.size() + 1));
    }
    try {
      const auto img = data::parse_nifti1(b);
      if (img.volume.data.size() == img.volume.nx * img.volume.ny * img.volume.nz)
        ++tally.parsed;
      else
        ++tally.other_failures;
    } catch (const ParseError&) {
      ++tally.parse_errors;
    } catch (...) {
      ++tally.other_failures;
    }
  }
  return tally;
}

}  // namespace mhunet::testing
