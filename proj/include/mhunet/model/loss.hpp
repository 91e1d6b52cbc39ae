#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mhunet/numeric/autograd.hpp"
#include "mhunet/segmask.hpp"

namespace mhunet::model {

struct LossWeights {
  real dice = real(0.5);
  real cross_entropy = real(0.5);
  /// Additive smoothing in the soft Dice ratio.
  real smooth = real(1);
};

/// Scalar loss on logits[K,H,W] against a binary mask (class index = label):
///   p      = softmax over classes per pixel
///   CE     = -mean_i log p[y_i, i]
///   Dice_k = (2 sum_i p_ki g_ki + s) / (sum_i p_ki + sum_i g_ki + s),  k = 1..K-1
///   loss   = w_dice (1 - mean_k Dice_k) + w_ce CE
inline Var segmentation_loss(const Var& logits, const SegMask& target, const LossWeights& w = {}) {
  const auto& s = logits.shape();
  if (s.size() != 3 || s[0] < 2) throw DimensionError("segmentation_loss: logits must be [K>=2,H,W]");
  if (s[1] != target.height || s[2] != target.width)
    throw DimensionError("segmentation_loss: logits " + shape_str(s) + " do not match mask " +
                         std::to_string(target.height) + "x" + std::to_string(target.width));
  const std::size_t K = s[0], P = s[1] * s[2];
  auto z = logits.data();

  std::vector<real> prob(K * P);
  real ce = 0;
  for (std::size_t i = 0; i < P; ++i) {
    real mx = z[i];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k * P + i]);
    real total = 0;
    for (std::size_t k = 0; k < K; ++k) total += (prob[k * P + i] = std::exp(z[k * P + i] - mx));
    for (std::size_t k = 0; k < K; ++k) prob[k * P + i] /= total;
    const std::size_t y = target.labels[i];
    ce -= z[y * P + i] - mx - std::log(total);
  }
  ce /= real(P);

  std::vector<real> inter(K, 0), denom(K, 0);
  for (std::size_t k = 1; k < K; ++k) {
    for (std::size_t i = 0; i < P; ++i) {
      const real g = target.labels[i] == k ? real(1) : real(0);
      inter[k] += prob[k * P + i] * g;
      denom[k] += prob[k * P + i] + g;
    }
  }
  real dice_mean = 0;
  for (std::size_t k = 1; k < K; ++k) dice_mean += (2 * inter[k] + w.smooth) / (denom[k] + w.smooth);
  dice_mean /= real(K - 1);
  const real loss = w.dice * (real(1) - dice_mean) + w.cross_entropy * ce;

  std::vector<std::uint8_t> labels = target.labels;
  return mhunet::detail::make_result(
      "segmentation_loss", Tensor::scalar(loss), {&logits},
      [K, P, w, prob = std::move(prob), inter = std::move(inter), denom = std::move(denom),
       labels = std::move(labels)](std::span<const real> g, ParentGrads& pg) {
        std::vector<real> dprob(K);
        for (std::size_t i = 0; i < P; ++i) {
          // Dice term: gradient with respect to the probabilities, then through the softmax.
          real dot = 0;
          for (std::size_t k = 0; k < K; ++k) {
            real d = 0;
            if (k > 0) {
              const real gk = labels[i] == k ? real(1) : real(0);
              const real den = denom[k] + w.smooth;
              d = -w.dice / real(K - 1) * (2 * gk * den - (2 * inter[k] + w.smooth)) / (den * den);
            }
            dprob[k] = d;
            dot += prob[k * P + i] * d;
          }
          for (std::size_t k = 0; k < K; ++k) {
            const real p = prob[k * P + i];
            const real onehot = labels[i] == k ? real(1) : real(0);
            const real dz = p * (dprob[k] - dot) + w.cross_entropy * (p - onehot) / real(P);
            pg[0][k * P + i] += g[0] * dz;
          }
        }
      });
}

}  // namespace mhunet::model
