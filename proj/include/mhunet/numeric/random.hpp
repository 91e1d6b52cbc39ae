#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace mhunet {

/// Counter-based generator. Draw k (k = 1, 2, ...) is
///
///   z = seed + k * 0x9E3779B97F4A7C15           (mod 2^64)
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   out = z ^ (z >> 31)
///
/// i.e. SplitMix64. Derived draws:
///   uniform()      = (out >> 11) * 2^-53                          in [0, 1)
///   normal()       = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)            two uniforms, no caching
///   below(n)       = out % n
///   shuffle(v)     = Fisher-Yates from the back, j = below(i + 1)
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    std::uint64_t z = seed_ + counter_ * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  std::uint64_t below(std::uint64_t n) noexcept { return n ? next_u64() % n : 0; }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent stream derived from this one's seed and a tag.
  RandomSource fork(std::uint64_t tag) const noexcept {
    RandomSource r(seed_ ^ (tag * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL));
    return r;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace mhunet
