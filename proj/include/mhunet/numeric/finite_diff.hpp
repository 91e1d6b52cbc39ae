#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mhunet/numeric/tensor.hpp"

namespace mhunet {

/// Central-difference gradient of a scalar function, one element at a time.
inline Tensor finite_diff_grad(const std::function<real(const Tensor&)>& f, const Tensor& x,
                               real eps = real(1e-5)) {
  if (!(eps > 0)) throw ContractError("finite_diff_grad: eps must be positive");
  std::vector<real> probe(x.vec());
  std::vector<real> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real orig = probe[i];
    probe[i] = orig + eps;
    const real fp = f(Tensor(x.shape(), probe));
    probe[i] = orig - eps;
    const real fm = f(Tensor(x.shape(), probe));
    probe[i] = orig;
    grad[i] = (fp - fm) / (real(2) * eps);
  }
  return Tensor(x.shape(), std::move(grad));
}

/// Central difference of f along one coordinate only.
inline real finite_diff_at(const std::function<real(const Tensor&)>& f, const Tensor& x,
                           std::size_t index, real eps = real(1e-5)) {
  std::vector<real> probe(x.vec());
  const real orig = probe[index];
  probe[index] = orig + eps;
  const real fp = f(Tensor(x.shape(), probe));
  probe[index] = orig - eps;
  const real fm = f(Tensor(x.shape(), probe));
  return (fp - fm) / (real(2) * eps);
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero pairs from dominating.
inline real relative_error(real a, real b, real floor = real(1e-8)) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace mhunet
