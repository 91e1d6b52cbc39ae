#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mhunet/numeric/fft.hpp"
#include "mhunet/numeric/linalg.hpp"
#include "mhunet/numeric/tensor.hpp"

namespace mhunet::ssm {

/// x'(t) = A x(t) + B u(t),  y(t) = C x(t) + D u(t)
struct ContinuousSSM {
  Tensor A;  // [n,n]
  Tensor B;  // [n,1]
  Tensor C;  // [1,n]
  real D = 0;

  std::size_t state_dim() const { return A.dim(0); }
};

/// x_k = A_bar x_{k-1} + B_bar u_k,  y_k = C_bar x_k + D u_k,  x_{-1} = 0
struct DiscreteSSM {
  Tensor A_bar;  // [n,n]
  Tensor B_bar;  // [n,1]
  Tensor C_bar;  // [1,n]
  real D = 0;
  real delta = 1;

  std::size_t state_dim() const { return A_bar.dim(0); }
};

/// Impulse response (C_bar B_bar, C_bar A_bar B_bar, ..., C_bar A_bar^{L-1} B_bar).
struct KernelRep {
  std::vector<real> k;
  std::size_t length() const noexcept { return k.size(); }
};

enum class ConvMode { direct, fft };

inline void validate(const ContinuousSSM& s) {
  const std::size_t n = s.A.rank() == 2 ? s.A.dim(0) : 0;
  if (n == 0 || s.A.dim(1) != n) throw DimensionError("ContinuousSSM: A must be square, n >= 1");
  if (s.B.shape() != Shape{n, 1}) throw DimensionError("ContinuousSSM: B must be [n,1]");
  if (s.C.shape() != Shape{1, n}) throw DimensionError("ContinuousSSM: C must be [1,n]");
}

/// HiPPO-LegS state matrix:
///   A[i][j] = -sqrt(2i+1) sqrt(2j+1)  (i > j),  -(i+1)  (i == j),  0  (i < j).
inline Tensor hippo_legs_init(std::size_t n) {
  if (n == 0) throw ContractError("hippo_legs_init: n must be >= 1");
  std::vector<real> a(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      a[i * n + j] = i == j ? -real(i + 1) : -std::sqrt(real(2 * i + 1)) * std::sqrt(real(2 * j + 1));
  return Tensor(Shape{n, n}, std::move(a));
}

/// Bilinear (Tustin) transform:
///   A_bar = (I - delta/2 A)^{-1} (I + delta/2 A)
///   B_bar = (I - delta/2 A)^{-1} delta B
///   C_bar = C
inline DiscreteSSM discretize_bilinear(const ContinuousSSM& sys, real delta) {
  validate(sys);
  if (!(delta > 0)) throw ContractError("discretize_bilinear: delta must be positive");
  const std::size_t n = sys.state_dim();
  std::vector<real> minus(n * n), plus(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const real h = delta / 2 * sys.A.at(i, j);
      const real id = i == j ? real(1) : real(0);
      minus[i * n + j] = id - h;
      plus[i * n + j] = id + h;
    }
  const Tensor resolvent = inverse(Tensor(Shape{n, n}, std::move(minus)));

  std::vector<real> a_bar(n * n, 0), b_bar(n, 0);
  kernels::gemm_acc(resolvent.data(), plus, a_bar, n, n, n);
  std::vector<real> db(n);
  for (std::size_t i = 0; i < n; ++i) db[i] = delta * sys.B[i];
  kernels::gemm_acc(resolvent.data(), db, b_bar, n, n, 1);

  return DiscreteSSM{Tensor(Shape{n, n}, std::move(a_bar)), Tensor(Shape{n, 1}, std::move(b_bar)), sys.C, sys.D,
                     delta};
}

namespace detail {

// out = A x (+ b * u), accumulated in a fixed order shared by the scan and kernel paths.
inline void propagate(const Tensor& A, std::span<const real> x, std::span<const real> b, real u,
                      std::span<real> out) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    real acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += A[i * n + j] * x[j];
    out[i] = acc + b[i] * u;
  }
}

inline real readout(std::span<const real> c, std::span<const real> x) {
  real acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += c[i] * x[i];
  return acc;
}

}  // namespace detail

/// Recurrent evaluation from a zero initial state.
inline std::vector<real> scan_recurrent(const DiscreteSSM& dsys, std::span<const real> u) {
  const std::size_t n = dsys.state_dim();
  std::vector<real> x(n, 0), next(n), y(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    detail::propagate(dsys.A_bar, x, dsys.B_bar.data(), u[k], next);
    x.swap(next);
    y[k] = detail::readout(dsys.C_bar.data(), x) + dsys.D * u[k];
  }
  return y;
}

inline std::vector<real> scan_recurrent(const DiscreteSSM& dsys, const std::vector<real>& u) {
  return scan_recurrent(dsys, std::span<const real>(u));
}

/// Kernel by iterated state propagation: s_0 = B_bar, s_{i+1} = A_bar s_i, k_i = C_bar s_i.
inline KernelRep materialize_kernel(const DiscreteSSM& dsys, std::size_t L) {
  if (L == 0) throw ContractError("materialize_kernel: L must be >= 1");
  const std::size_t n = dsys.state_dim();
  const std::vector<real> zeros(n, 0);
  std::vector<real> s(n, 0), next(n);
  // First step goes through the same propagate() as the scan so k equals the impulse response.
  detail::propagate(dsys.A_bar, s, dsys.B_bar.data(), real(1), next);
  s.swap(next);
  KernelRep kr;
  kr.k.resize(L);
  kr.k[0] = detail::readout(dsys.C_bar.data(), s);
  for (std::size_t i = 1; i < L; ++i) {
    detail::propagate(dsys.A_bar, s, zeros, real(0), next);
    s.swap(next);
    kr.k[i] = detail::readout(dsys.C_bar.data(), s);
  }
  return kr;
}

/// y = K * u (causal, truncated to L) + D u.
inline std::vector<real> apply_convolutional(const KernelRep& kernel, std::span<const real> u, real D,
                                             ConvMode mode) {
  if (kernel.length() != u.size())
    throw DimensionError("apply_convolutional: kernel length " + std::to_string(kernel.length()) +
                         " != sequence length " + std::to_string(u.size()));
  std::vector<real> y = mode == ConvMode::fft ? fft_convolve<real>(u, kernel.k)
                                              : causal_convolve_direct<real>(u, kernel.k);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += D * u[i];
  return y;
}

inline std::vector<real> apply_convolutional(const KernelRep& kernel, const std::vector<real>& u, real D,
                                             ConvMode mode) {
  return apply_convolutional(kernel, std::span<const real>(u), D, mode);
}

/// Scalar bilinear pair for a diagonal entry a: (A_bar, B_bar / b).
struct ScalarDiscretization {
  real a_bar;
  real b_scale;  // B_bar = b_scale * b
};

inline ScalarDiscretization bilinear_scalar(real a, real delta) {
  const real p = real(1) - delta / 2 * a;
  return {(real(1) + delta / 2 * a) / p, delta / p};
}

inline ScalarDiscretization zoh_scalar(real a, real delta) { return {std::exp(delta * a), delta}; }

}  // namespace mhunet::ssm
