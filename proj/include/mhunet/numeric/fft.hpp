#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace mhunet {

/// In-place iterative radix-2 FFT. `a.size()` must be a power of two.
/// `inverse` applies the conjugate transform and the 1/N scaling.
template <std::floating_point T>
void fft_inplace(std::vector<std::complex<T>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n <= 1) return;

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  // Twiddles are evaluated directly per stage (not by repeated multiplication) to keep
  // the round-off independent of transform length.
  std::vector<std::complex<T>> w(n / 2);
  const T sign = inverse ? T(1) : T(-1);
  for (std::size_t k = 0; k < n / 2; ++k) {
    T ang = sign * T(2) * std::numbers::pi_v<T> * T(k) / T(n);
    w[k] = {std::cos(ang), std::sin(ang)};
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + half] * w[k * step];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }

  if (inverse) {
    const T scale = T(1) / T(n);
    for (auto& x : a) x *= scale;
  }
}

/// First L samples of the causal linear convolution y[t] = sum_{j<=t} k[j] u[t-j],
/// by direct O(L^2) summation.
template <std::floating_point T>
std::vector<T> causal_convolve_direct(std::span<const T> u, std::span<const T> k) {
  const std::size_t L = u.size();
  std::vector<T> y(L, T(0));
  for (std::size_t t = 0; t < L; ++t) {
    T acc = 0;
    const std::size_t jmax = std::min(t + 1, k.size());
    for (std::size_t j = 0; j < jmax; ++j) acc += k[j] * u[t - j];
    y[t] = acc;
  }
  return y;
}

/// Same quantity as causal_convolve_direct, via zero-padded FFTs of length >= 2L-1
/// so the circular product equals the linear one.
template <std::floating_point T>
std::vector<T> fft_convolve(std::span<const T> u, std::span<const T> k) {
  const std::size_t L = u.size();
  if (L == 0) return {};
  const std::size_t n = std::bit_ceil(2 * L - 1);
  std::vector<std::complex<T>> fu(n), fk(n);
  for (std::size_t i = 0; i < L; ++i) fu[i] = u[i];
  for (std::size_t i = 0; i < std::min(L, k.size()); ++i) fk[i] = k[i];
  fft_inplace(fu, false);
  fft_inplace(fk, false);
  for (std::size_t i = 0; i < n; ++i) fu[i] *= fk[i];
  fft_inplace(fu, true);
  std::vector<T> y(L);
  for (std::size_t i = 0; i < L; ++i) y[i] = fu[i].real();
  return y;
}

template <std::floating_point T>
std::vector<T> fft_convolve(const std::vector<T>& u, const std::vector<T>& k) {
  return fft_convolve(std::span<const T>(u), std::span<const T>(k));
}

}  // namespace mhunet
