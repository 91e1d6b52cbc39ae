#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mhunet/errors.hpp"
#include "mhunet/model/loss.hpp"
#include "mhunet/model/network.hpp"

namespace mhunet::model {

enum class OptimizerKind { sgd, adam };

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  real lr = real(0.01);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

/// Per-parameter moment estimates (Adam only) and the step counter.
struct OptimizerState {
  std::size_t step = 0;
  std::map<std::string, std::vector<real>> m, v;
};

struct Sample {
  Tensor image;  // [1,H,W]
  SegMask mask;  // H x W
};

/// One optimization step on a batch. Gradients are averaged over the samples, processed in
/// order with dropout masks from `rng`. Batch-norm running statistics are blended with each
/// sample's statistics in the same order. Returns the mean loss over the batch.
inline real train_step(const std::vector<Sample>& batch, ParameterSet& params, const ModelConfig& cfg,
                       OptimizerState& state, const OptimizerConfig& opt, RandomSource& rng,
                       const LossWeights& weights = {}) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  if (!(opt.lr >= 0) || !std::isfinite(opt.lr)) throw ConfigError("train_step: learning rate must be finite and >= 0");

  std::map<std::string, std::vector<real>> grad_sum;
  std::vector<std::map<std::string, RunningStats>> observed(batch.size());
  real loss_sum = 0;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    GradTape tape;
    ParamView pv(params, tape);
    ForwardContext ctx{true, &rng, &observed[b]};
    Var logits = forward(Var(batch[b].image), pv, cfg, ctx);
    Var loss = segmentation_loss(logits, batch[b].mask, weights);
    const real value = loss.value().item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " at optimizer step " << state.step << ", batch sample " << b
          << "; logits finite: " << (logits.value().all_finite() ? "yes" : "no");
      throw TrainingError(msg.str());
    }
    loss_sum += value;
    auto grads = backward(loss);
    for (const auto& e : params.entries()) {
      if (!e.trainable) continue;
      const Tensor& g = grads.at(e.name);
      auto& acc = grad_sum[e.name];
      if (acc.empty()) acc.assign(g.size(), real(0));
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }

  const real inv_b = real(1) / real(batch.size());
  for (auto& [name, g] : grad_sum)
    for (auto& v : g) {
      v *= inv_b;
      if (!std::isfinite(v))
        throw TrainingError("non-finite gradient for '" + name + "' at optimizer step " + std::to_string(state.step));
    }

  for (const auto& obs : observed)
    for (const auto& [prefix, stats] : obs) {
      const std::string mean_name = prefix + ".running_mean", var_name = prefix + ".running_var";
      std::vector<real> mean = params.get(mean_name).vec(), var = params.get(var_name).vec();
      for (std::size_t c = 0; c < mean.size(); ++c) {
        mean[c] = (1 - kRunningMomentum) * mean[c] + kRunningMomentum * stats.mean[c];
        var[c] = (1 - kRunningMomentum) * var[c] + kRunningMomentum * stats.var[c];
      }
      params.set(mean_name, Tensor(params.get(mean_name).shape(), std::move(mean)));
      params.set(var_name, Tensor(params.get(var_name).shape(), std::move(var)));
    }

  ++state.step;
  if (opt.lr == 0) return loss_sum * inv_b;  // null update: leave every parameter bit-identical

  const real t = real(state.step);
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    const auto& g = grad_sum.at(e.name);
    std::vector<real> w = e.value.vec();
    if (opt.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= opt.lr * g[i];
    } else {
      auto& m = state.m[e.name];
      auto& v = state.v[e.name];
      if (m.empty()) m.assign(w.size(), real(0));
      if (v.empty()) v.assign(w.size(), real(0));
      const real c1 = real(1) - std::pow(opt.beta1, t), c2 = real(1) - std::pow(opt.beta2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = opt.beta1 * m[i] + (1 - opt.beta1) * g[i];
        v[i] = opt.beta2 * v[i] + (1 - opt.beta2) * g[i] * g[i];
        w[i] -= opt.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
      }
    }
    params.set(e.name, Tensor(e.value.shape(), std::move(w)));
  }
  return loss_sum * inv_b;
}

}  // namespace mhunet::model
