#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mhunet/numeric/tensor.hpp"

namespace mhunet {

namespace kernels {

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_acc(std::span<const real> a, std::span<const real> b, std::span<real> c,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    real* crow = c.data() + i * n;
    const real* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const real av = arow[p];
      if (av == 0) continue;
      const real* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
inline void gemm_abt_acc(std::span<const real> a, std::span<const real> b, std::span<real> c,
                         std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const real* brow = b.data() + j * k;
      real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
inline void gemm_atb_acc(std::span<const real> a, std::span<const real> b, std::span<real> c,
                         std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = a.data() + i * k;
    const real* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const real av = arow[p];
      if (av == 0) continue;
      real* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

/// Pivot magnitude below which elimination reports a singular matrix.
inline constexpr real kSingularPivot = real(1e-12);

/// Gauss-Jordan inverse with partial pivoting.
inline Tensor inverse(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw DimensionError("inverse: expected square matrix, got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0);
  std::vector<real> m(a.vec());
  std::vector<real> inv(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m[r * n + col]) > std::abs(m[piv * n + col])) piv = r;
    if (!(std::abs(m[piv * n + col]) >= kSingularPivot))
      throw SingularityError("inverse: pivot " + std::to_string(m[piv * n + col]) + " in column " +
                             std::to_string(col) + " is below 1e-12");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(m[col * n + j], m[piv * n + j]);
        std::swap(inv[col * n + j], inv[piv * n + j]);
      }
    }
    const real d = m[col * n + col];
    for (std::size_t j = 0; j < n; ++j) {
      m[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const real f = m[r * n + col];
      if (f == 0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m[r * n + j] -= f * m[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return Tensor(Shape{n, n}, std::move(inv));
}

}  // namespace mhunet
