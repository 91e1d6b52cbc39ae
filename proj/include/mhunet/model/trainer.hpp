#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "mhunet/metrics/metrics.hpp"
#include "mhunet/model/training.hpp"

namespace mhunet::model {

/// Eval-mode predictions scored against each sample's mask, in sample order.
inline std::vector<metrics::MetricsReport> evaluate_samples(const std::vector<Sample>& samples,
                                                            const ParameterSet& params, const ModelConfig& cfg,
                                                            std::optional<metrics::Spacing> spacing = {}) {
  std::vector<metrics::MetricsReport> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(metrics::evaluate(predict(s.image, params, cfg), s.mask, spacing));
  return out;
}

/// Mean DSC over the samples where it is defined; nullopt if none is.
inline std::optional<double> mean_dsc(const std::vector<metrics::MetricsReport>& reports) {
  if (reports.empty()) return std::nullopt;
  return metrics::aggregate(reports).metric[1].mean;
}

struct FitOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  LossWeights loss;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0;
  std::optional<double> val_dsc;
};

struct FitResult {
  std::vector<real> step_losses;
  std::vector<EpochReport> epochs;
  ParameterSet final_params;
  ParameterSet best_params;  // highest validation DSC (earliest on ties); the initialization if no epoch ran
  std::optional<double> best_dsc;
  std::size_t best_epoch = 0;
};

using StepHook = std::function<void(std::size_t epoch, std::size_t step, real loss)>;
using EpochHook = std::function<void(const EpochReport&)>;

/// Mini-batch training. Each epoch visits the training samples in an order drawn from
/// RandomSource(seed).fork(1); dropout draws from fork(2). Validation runs after every epoch.
inline FitResult fit(const std::vector<Sample>& train, const std::vector<Sample>& val, const ModelConfig& cfg,
                     ParameterSet params, const FitOptions& opt, const StepHook& on_step = {},
                     const EpochHook& on_epoch = {}) {
  if (opt.batch_size == 0) throw ConfigError("fit: batch size must be >= 1");
  if (opt.epochs > 0 && train.empty()) throw ContractError("fit: no training samples");
  const RandomSource root(opt.seed);
  RandomSource order_rng = root.fork(1), dropout_rng = root.fork(2);

  FitResult r;
  r.best_params = params;
  OptimizerState state;
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      std::vector<Sample> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + opt.batch_size); ++k)
        batch.push_back(train[order[k]]);
      const real loss = train_step(batch, params, cfg, state, opt.optimizer, dropout_rng, opt.loss);
      r.step_losses.push_back(loss);
      loss_sum += loss;
      ++batches;
      ++step;
      if (on_step) on_step(epoch, step, loss);
    }
    EpochReport rep{epoch, loss_sum / double(batches), mean_dsc(evaluate_samples(val, params, cfg))};
    const bool better = rep.val_dsc && (!r.best_dsc || *rep.val_dsc > *r.best_dsc);
    if (better || (r.best_epoch == 0 && !r.best_dsc)) {
      r.best_params = params;
      r.best_dsc = rep.val_dsc;
      r.best_epoch = epoch;
    }
    r.epochs.push_back(rep);
    if (on_epoch) on_epoch(rep);
  }
  r.final_params = std::move(params);
  return r;
}

}  // namespace mhunet::model
