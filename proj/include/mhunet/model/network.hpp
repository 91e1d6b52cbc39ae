#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mhunet/model/config.hpp"
#include "mhunet/model/layers.hpp"
#include "mhunet/model/parameters.hpp"
#include "mhunet/segmask.hpp"

namespace mhunet::model {

/// Every tensor of the network in forward-pass order.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  validate(cfg);
  std::vector<ParamSpec> out = patch_embed_specs(cfg);
  auto append = [&out](std::vector<ParamSpec> more) {
    out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  };
  const std::size_t S = cfg.num_stages();
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < cfg.stage_depths[i]; ++j)
      append(vss_block_specs("enc" + std::to_string(i) + ".vss" + std::to_string(j), cfg.stage_channels(i), cfg));
    if (i + 1 < S) append(patch_merge_specs("merge" + std::to_string(i), cfg.stage_channels(i)));
  }
  for (std::size_t i = S - 1; i-- > 0;) {
    const std::string p = "dec" + std::to_string(i);
    append(patch_expand_specs(p, cfg.stage_channels(i + 1)));
    for (std::size_t j = 0; j < cfg.stage_depths[i]; ++j)
      append(vss_block_specs(p + ".vss" + std::to_string(j), cfg.stage_channels(i), cfg));
  }
  append(final_expand_specs(cfg));
  return out;
}

inline ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  return materialize(parameter_layout(cfg), seed);
}

/// Exact number of learnable scalars (running statistics excluded).
inline std::size_t count_params(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : parameter_layout(cfg))
    if (s.trainable) n += shape_numel(s.shape);
  return n;
}

struct StageFeature {
  std::size_t height = 0, width = 0, channels = 0;
  Var tokens;  // [height*width, channels]
};

/// Encoder outputs per stage, kept for the skip connections.
struct FeaturePyramid {
  std::vector<StageFeature> stages;
};

struct ForwardOutput {
  Var logits;  // [num_classes, H, W]
  FeaturePyramid encoder;
};

/// image[1,H,W] with H = W = cfg.input_extent -> logits[num_classes, H, W].
inline ForwardOutput forward_full(const Var& image, const ParamView& pv, const ModelConfig& cfg,
                                  const ForwardContext& ctx) {
  validate(cfg);
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 1 || s[1] != cfg.input_extent || s[2] != cfg.input_extent)
    throw DimensionError("forward: image " + shape_str(s) + " does not match configured extent [1," +
                         std::to_string(cfg.input_extent) + "," + std::to_string(cfg.input_extent) + "]");
  const std::size_t S = cfg.num_stages();
  ForwardOutput out;

  Var x = patch_embed(image, pv, cfg.patch_size);
  for (std::size_t i = 0; i < S; ++i) {
    const std::size_t e = cfg.stage_extent(i);
    if (i > 0) x = patch_merge(x, 2 * e, 2 * e, pv, "merge" + std::to_string(i - 1));
    for (std::size_t j = 0; j < cfg.stage_depths[i]; ++j)
      x = vss_block(x, e, e, pv, "enc" + std::to_string(i) + ".vss" + std::to_string(j), cfg);
    out.encoder.stages.push_back(StageFeature{e, e, cfg.stage_channels(i), x});
  }

  for (std::size_t i = S - 1; i-- > 0;) {
    const std::string p = "dec" + std::to_string(i);
    const std::size_t e = cfg.stage_extent(i + 1);
    x = patch_expand_hunet(x, e, e, out.encoder.stages[i].tokens, pv, p, cfg, ctx);
    for (std::size_t j = 0; j < cfg.stage_depths[i]; ++j)
      x = vss_block(x, 2 * e, 2 * e, pv, p + ".vss" + std::to_string(j), cfg);
  }

  out.logits = final_expand(x, cfg.stage_extent(0), cfg.stage_extent(0), pv, cfg, ctx);
  return out;
}

inline Var forward(const Var& image, const ParamView& pv, const ModelConfig& cfg, const ForwardContext& ctx) {
  return forward_full(image, pv, cfg, ctx).logits;
}

/// Eval-mode logits without a tape.
inline Tensor infer_logits(const Tensor& image, const ParameterSet& params, const ModelConfig& cfg) {
  return forward(Var(image), ParamView(params), cfg, ForwardContext{}).value();
}

/// Per-pixel argmax over logits[K,H,W]; ties go to the lower class index.
inline std::vector<std::size_t> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax_classes: logits must be [K,H,W]");
  const std::size_t K = logits.dim(0), P = logits.dim(1) * logits.dim(2);
  std::vector<std::size_t> cls(P, 0);
  for (std::size_t i = 0; i < P; ++i) {
    real best = logits[i];
    for (std::size_t k = 1; k < K; ++k)
      if (logits[k * P + i] > best) {
        best = logits[k * P + i];
        cls[i] = k;
      }
  }
  return cls;
}

/// Foreground wherever the argmax class is not background.
inline SegMask mask_from_logits(const Tensor& logits) {
  auto cls = argmax_classes(logits);
  SegMask m(logits.dim(1), logits.dim(2));
  for (std::size_t i = 0; i < cls.size(); ++i) m.labels[i] = cls[i] != 0;
  return m;
}

inline SegMask predict(const Tensor& image, const ParameterSet& params, const ModelConfig& cfg) {
  return mask_from_logits(infer_logits(image, params, cfg));
}

}  // namespace mhunet::model
