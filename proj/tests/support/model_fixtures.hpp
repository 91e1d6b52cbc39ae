#pragma once

// Toy model configurations and the end-to-end gradient probe shared by unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mhunet/model.hpp"
#include "mhunet/numeric/finite_diff.hpp"

namespace mhunet::testing {

/// 16x16 input, C=4, n=4, two stages of depth 1.
inline model::ModelConfig toy_config() {
  model::ModelConfig c;
  c.embed_dim = 4;
  c.state_dim = 4;
  c.stage_depths = {1, 1};
  c.input_extent = 16;
  c.dropout_rate = 0.1;
  return c;
}

inline Tensor random_image(RandomSource& rng, std::size_t extent) {
  std::vector<real> d(extent * extent);
  for (auto& v : d) v = static_cast<real>(rng.uniform());
  return Tensor(Shape{1, extent, extent}, std::move(d));
}

/// Filled disc of the given radius around the image center.
inline SegMask disc_mask(std::size_t extent, double radius) {
  SegMask m(extent, extent);
  const double c = (static_cast<double>(extent) - 1) / 2;
  for (std::size_t i = 0; i < extent; ++i)
    for (std::size_t j = 0; j < extent; ++j)
      m.at(i, j) = (i - c) * (i - c) + (j - c) * (j - c) <= radius * radius;
  return m;
}

struct GradProbeResult {
  std::size_t probes = 0;
  real worst_relative_error = 0;
};

/// Training-mode loss (batch-norm sample statistics, dropout masks from a fixed seed) as a
/// function of the parameters; compares tape gradients with central differences at one entry
/// of every trainable tensor plus `extra` uniformly drawn entries.
inline GradProbeResult probe_model_gradients(const model::ModelConfig& cfg, std::uint64_t seed, std::size_t extra,
                                             real eps = real(1e-6), real floor = real(1e-3)) {
  RandomSource rng(seed);
  model::ParameterSet params = model::init_parameters(cfg, seed);
  const Tensor image = random_image(rng, cfg.input_extent);
  const SegMask mask = disc_mask(cfg.input_extent, cfg.input_extent / 4.0);
  const std::uint64_t dropout_seed = rng.next_u64();

  auto loss_of = [&](const model::ParameterSet& ps, GradTape* tape) {
    RandomSource drop(dropout_seed);
    model::ForwardContext ctx{true, &drop, nullptr};
    if (tape) {
      model::ParamView pv(ps, *tape);
      return model::segmentation_loss(model::forward(Var(image), pv, cfg, ctx), mask);
    }
    return model::segmentation_loss(model::forward(Var(image), model::ParamView(ps), cfg, ctx), mask);
  };

  GradTape tape;
  auto grads = backward(loss_of(params, &tape));

  struct Probe {
    std::size_t entry, index;
  };
  std::vector<Probe> probes;
  const auto& entries = params.entries();
  std::vector<std::size_t> trainable;
  for (std::size_t k = 0; k < entries.size(); ++k)
    if (entries[k].trainable) trainable.push_back(k);
  for (auto k : trainable) probes.push_back({k, static_cast<std::size_t>(rng.below(entries[k].value.size()))});
  for (std::size_t i = 0; i < extra; ++i) {
    auto k = trainable[rng.below(trainable.size())];
    probes.push_back({k, static_cast<std::size_t>(rng.below(entries[k].value.size()))});
  }

  GradProbeResult result;
  for (const auto& p : probes) {
    const auto& e = entries[p.entry];
    auto at = [&](real delta) {
      std::vector<real> v = e.value.vec();
      v[p.index] += delta;
      model::ParameterSet shifted = params;
      shifted.set(e.name, Tensor(e.value.shape(), std::move(v)));
      return loss_of(shifted, nullptr).value().item();
    };
    const real numeric = (at(eps) - at(-eps)) / (2 * eps);
    const real analytic = grads.at(e.name)[p.index];
    result.worst_relative_error = std::max(result.worst_relative_error, relative_error(analytic, numeric, floor));
    ++result.probes;
  }
  return result;
}

}  // namespace mhunet::testing
