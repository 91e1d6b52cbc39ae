#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mhunet/model/config.hpp"
#include "mhunet/model/parameters.hpp"
#include "mhunet/numeric/ops.hpp"
#include "mhunet/ssm/selective_scan.hpp"

namespace mhunet::model {

inline constexpr real kNormEps = real(1e-5);
/// Weight of the newest observation in the batch-norm running averages.
inline constexpr real kRunningMomentum = real(0.1);

/// Mode flags and sinks threaded through one forward pass.
struct ForwardContext {
  bool training = false;
  /// Dropout mask source; consumed in a fixed order, so a pass is reproducible from its seed.
  RandomSource* rng = nullptr;
  /// Training mode: receives each batch-norm layer's per-sample statistics, keyed by prefix.
  std::map<std::string, RunningStats>* observed = nullptr;
};

// ---------------------------------------------------------------------------
// Layout helpers

inline real fan_in_scale(std::size_t fan_in, real gain = 1) { return std::sqrt(gain / real(fan_in)); }

inline void append_norm(std::vector<ParamSpec>& out, const std::string& p, std::size_t c) {
  out.push_back({p + ".gamma", {c}, true, InitKind::ones});
  out.push_back({p + ".beta", {c}, true, InitKind::zeros});
}

inline void append_batch_norm(std::vector<ParamSpec>& out, const std::string& p, std::size_t c) {
  append_norm(out, p, c);
  out.push_back({p + ".running_mean", {c}, false, InitKind::zeros});
  out.push_back({p + ".running_var", {c}, false, InitKind::ones});
}

// ---------------------------------------------------------------------------
// Token <-> channel-first layout

/// [H*W, C] -> [C, H, W]
inline Var tokens_to_chw(const Var& tokens, std::size_t H, std::size_t W) {
  const std::size_t C = tokens.shape()[1];
  return reshape(transpose(tokens), {C, H, W});
}

/// [C, H, W] -> [H*W, C]
inline Var chw_to_tokens(const Var& x) {
  const auto& s = x.shape();
  return transpose(reshape(x, {s[0], s[1] * s[2]}));
}

inline void require_tokens(const char* op, const Var& tokens, std::size_t H, std::size_t W) {
  if (tokens.shape().size() != 2 || tokens.shape()[0] != H * W)
    throw DimensionError(std::string(op) + ": tokens " + shape_str(tokens.shape()) + " do not form a " +
                         std::to_string(H) + "x" + std::to_string(W) + " grid");
}

// ---------------------------------------------------------------------------
// Patch embedding

inline std::vector<ParamSpec> patch_embed_specs(const ModelConfig& cfg) {
  const std::size_t pp = cfg.patch_size * cfg.patch_size;
  return {{"embed.weight", {pp, cfg.embed_dim}, true, InitKind::normal, fan_in_scale(pp)},
          {"embed.bias", {cfg.embed_dim}, true, InitKind::zeros}};
}

/// image[1,H,W] -> tokens[(H/p)(W/p), C]: each non-overlapping p x p patch, flattened
/// row-major, is projected linearly. No positional term is added.
inline Var patch_embed(const Var& image, const ParamView& pv, std::size_t patch) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 1) throw DimensionError("patch_embed: image must be [1,H,W], got " + shape_str(s));
  const std::size_t H = s[1], W = s[2];
  if (H % patch || W % patch)
    throw DimensionError("patch_embed: " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by patch size " + std::to_string(patch));
  const std::size_t th = H / patch, tw = W / patch;
  std::vector<std::size_t> idx;
  idx.reserve(H * W);
  for (std::size_t ti = 0; ti < th; ++ti)
    for (std::size_t tj = 0; tj < tw; ++tj)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx) idx.push_back((ti * patch + dy) * W + tj * patch + dx);
  Var patches = reshape(gather_rows(reshape(image, {H * W, 1}), std::move(idx)), {th * tw, patch * patch});
  return linear(patches, pv("embed.weight"), pv("embed.bias"));
}

// ---------------------------------------------------------------------------
// VSS block

inline std::vector<ParamSpec> vss_block_specs(const std::string& p, std::size_t D, const ModelConfig& cfg) {
  const std::size_t E = D * cfg.expand, n = cfg.state_dim;
  std::vector<ParamSpec> out;
  append_norm(out, p + ".norm_in", D);
  out.push_back({p + ".in_proj.weight", {D, E}, true, InitKind::normal, fan_in_scale(D)});
  out.push_back({p + ".in_proj.bias", {E}, true, InitKind::zeros});
  out.push_back({p + ".dwconv.weight", {E, 1, 3, 3}, true, InitKind::normal, fan_in_scale(9)});
  out.push_back({p + ".dwconv.bias", {E}, true, InitKind::zeros});
  out.push_back({p + ".ssm.A_log", {E, n}, true, InitKind::a_log});
  out.push_back({p + ".ssm.W_delta", {E, E}, true, InitKind::normal, fan_in_scale(E, real(0.1))});
  out.push_back({p + ".ssm.b_delta", {E}, true, InitKind::delta_bias});
  out.push_back({p + ".ssm.W_B", {E, n}, true, InitKind::normal, fan_in_scale(E)});
  out.push_back({p + ".ssm.b_B", {n}, true, InitKind::zeros});
  out.push_back({p + ".ssm.W_C", {E, n}, true, InitKind::normal, fan_in_scale(E)});
  out.push_back({p + ".ssm.b_C", {n}, true, InitKind::zeros});
  out.push_back({p + ".ssm.D", {E}, true, InitKind::ones});
  append_norm(out, p + ".norm_out", E);
  out.push_back({p + ".gate.weight", {D, E}, true, InitKind::normal, fan_in_scale(D)});
  out.push_back({p + ".gate.bias", {E}, true, InitKind::zeros});
  out.push_back({p + ".out_proj.weight", {E, D}, true, InitKind::normal, fan_in_scale(E)});
  return out;
}

/// A = -exp(A_log) keeps the state matrix strictly negative under any gradient step.
inline ssm::SelectiveParams selective_params(const ParamView& pv, const std::string& p) {
  return ssm::SelectiveParams{scale(exponential(pv(p + ".A_log")), real(-1)),
                              pv(p + ".W_delta"),
                              pv(p + ".b_delta"),
                              pv(p + ".W_B"),
                              pv(p + ".b_B"),
                              pv(p + ".W_C"),
                              pv(p + ".b_C"),
                              pv(p + ".D")};
}

/// tokens[H*W, D] -> tokens[H*W, D]:
///   h = LN(x)
///   s = LN(ss2d(act(dwconv3x3(h W_in + b_in))))
///   g = act(h W_gate + b_gate)
///   out = x + (s * g) W_out
inline Var vss_block(const Var& tokens, std::size_t H, std::size_t W, const ParamView& pv, const std::string& p,
                     const ModelConfig& cfg) {
  require_tokens("vss_block", tokens, H, W);
  const std::size_t N = H * W;
  Var h = normalize_layer(tokens, NormKind::layer, pv(p + ".norm_in.gamma"), pv(p + ".norm_in.beta"), kNormEps,
                          false);
  Var e = linear(h, pv(p + ".in_proj.weight"), pv(p + ".in_proj.bias"));
  const std::size_t E = e.shape()[1];
  Var conv = add_bias_channel(conv2d(tokens_to_chw(e, H, W), pv(p + ".dwconv.weight"), 1, 1, true),
                              pv(p + ".dwconv.bias"));
  Var a = activation(chw_to_tokens(conv), cfg.activation);
  Var s = reshape(ssm::ss2d(reshape(a, {H, W, E}), selective_params(pv, p + ".ssm"), cfg.rule), {N, E});
  s = normalize_layer(s, NormKind::layer, pv(p + ".norm_out.gamma"), pv(p + ".norm_out.beta"), kNormEps, false);
  Var gate = activation(linear(h, pv(p + ".gate.weight"), pv(p + ".gate.bias")), cfg.activation);
  return add(tokens, linear(mul(s, gate), pv(p + ".out_proj.weight")));
}

// ---------------------------------------------------------------------------
// Patch merging

inline std::vector<ParamSpec> patch_merge_specs(const std::string& p, std::size_t C) {
  std::vector<ParamSpec> out;
  append_norm(out, p + ".norm", 4 * C);
  out.push_back({p + ".weight", {4 * C, 2 * C}, true, InitKind::normal, fan_in_scale(4 * C)});
  return out;
}

/// tokens[H*W, C] -> tokens[(H/2)(W/2), 2C]. Each 2x2 neighborhood is concatenated in the
/// order (2i,2j), (2i+1,2j), (2i,2j+1), (2i+1,2j+1), normalized, and projected 4C -> 2C.
inline Var patch_merge(const Var& tokens, std::size_t H, std::size_t W, const ParamView& pv, const std::string& p) {
  require_tokens("patch_merge", tokens, H, W);
  if (H % 2 || W % 2)
    throw DimensionError("patch_merge: extents " + std::to_string(H) + "x" + std::to_string(W) + " must be even");
  const std::size_t C = tokens.shape()[1], h2 = H / 2, w2 = W / 2;
  std::vector<std::size_t> idx;
  idx.reserve(H * W);
  for (std::size_t i = 0; i < h2; ++i)
    for (std::size_t j = 0; j < w2; ++j) {
      idx.push_back((2 * i) * W + 2 * j);
      idx.push_back((2 * i + 1) * W + 2 * j);
      idx.push_back((2 * i) * W + 2 * j + 1);
      idx.push_back((2 * i + 1) * W + 2 * j + 1);
    }
  Var merged = reshape(gather_rows(tokens, std::move(idx)), {h2 * w2, 4 * C});
  merged = normalize_layer(merged, NormKind::layer, pv(p + ".norm.gamma"), pv(p + ".norm.beta"), kNormEps, false);
  return linear(merged, pv(p + ".weight"));
}

// ---------------------------------------------------------------------------
// Convolutional refinement (HUNet upsampling path)

inline void append_refine_specs(std::vector<ParamSpec>& out, const std::string& p, std::size_t c_in,
                                std::size_t c_out) {
  out.push_back({p + ".conv1.weight", {c_out, c_in, 3, 3}, true, InitKind::normal, fan_in_scale(9 * c_in, 2)});
  append_batch_norm(out, p + ".bn1", c_out);
  out.push_back({p + ".conv2.weight", {c_out, c_out, 3, 3}, true, InitKind::normal, fan_in_scale(9 * c_out, 2)});
  append_batch_norm(out, p + ".bn2", c_out);
}

/// Batch norm over the spatial positions of one sample, channel axis 0. Training mode uses
/// (and reports) the sample's statistics; eval mode uses the stored running statistics.
inline Var batch_norm_chw(const Var& x, const ParamView& pv, const std::string& p, const ForwardContext& ctx) {
  NormOptions opt;
  opt.channel_axis = 0;
  RunningStats running, observed;
  if (ctx.training) {
    opt.observed = &observed;
  } else {
    running = RunningStats{pv.raw(p + ".running_mean"), pv.raw(p + ".running_var")};
    opt.running = &running;
  }
  Var y = normalize_layer(x, NormKind::batch, pv(p + ".gamma"), pv(p + ".beta"), kNormEps, ctx.training, opt);
  if (ctx.training && ctx.observed) (*ctx.observed)[p] = observed;
  return y;
}

inline Var apply_dropout(const Var& x, const ModelConfig& cfg, const ForwardContext& ctx) {
  if (!ctx.training || cfg.dropout_rate == 0) return x;
  if (!ctx.rng) throw ContractError("training forward pass with dropout needs a random source");
  return dropout(x, static_cast<real>(cfg.dropout_rate), *ctx.rng, true);
}

/// Two (conv3x3 -> batch norm -> ReLU -> dropout) stages on a [C,H,W] map.
inline Var refine(const Var& x, const ParamView& pv, const std::string& p, const ModelConfig& cfg,
                  const ForwardContext& ctx) {
  Var y = conv2d(x, pv(p + ".conv1.weight"), 1, 1);
  y = apply_dropout(relu(batch_norm_chw(y, pv, p + ".bn1", ctx)), cfg, ctx);
  y = conv2d(y, pv(p + ".conv2.weight"), 1, 1);
  return apply_dropout(relu(batch_norm_chw(y, pv, p + ".bn2", ctx)), cfg, ctx);
}

inline std::vector<ParamSpec> patch_expand_specs(const std::string& p, std::size_t c_in) {
  const std::size_t c_half = c_in / 2;
  std::vector<ParamSpec> out;
  out.push_back({p + ".up.weight", {c_in, c_half, 2, 2}, true, InitKind::normal, fan_in_scale(c_in)});
  out.push_back({p + ".up.bias", {c_half}, true, InitKind::zeros});
  append_refine_specs(out, p, c_in, c_half);
  return out;
}

/// HUNet upsampling: tokens[H*W, C] with skip[(2H)(2W), C/2] -> tokens[(2H)(2W), C/2].
/// Stride-2 transposed conv (C -> C/2), concatenation with the skip, then refine().
inline Var patch_expand_hunet(const Var& tokens, std::size_t H, std::size_t W, const Var& skip, const ParamView& pv,
                              const std::string& p, const ModelConfig& cfg, const ForwardContext& ctx) {
  require_tokens("patch_expand_hunet", tokens, H, W);
  const std::size_t C = tokens.shape()[1];
  if (C % 2 || skip.shape().size() != 2 || skip.shape()[0] != 4 * H * W || skip.shape()[1] != C / 2)
    throw DimensionError("patch_expand_hunet: skip " + shape_str(skip.shape()) + " does not match tokens " +
                         shape_str(tokens.shape()) + " at " + std::to_string(H) + "x" + std::to_string(W) +
                         " (expected [" + std::to_string(4 * H * W) + "," + std::to_string(C / 2) + "])");
  Var up = add_bias_channel(conv2d_transposed(tokens_to_chw(tokens, H, W), pv(p + ".up.weight"), 2),
                            pv(p + ".up.bias"));
  Var joined = concat0(up, tokens_to_chw(skip, 2 * H, 2 * W));
  return chw_to_tokens(refine(joined, pv, p, cfg, ctx));
}

// ---------------------------------------------------------------------------
// Full-resolution expansion and segmentation head

inline std::vector<ParamSpec> final_expand_specs(const ModelConfig& cfg) {
  const std::size_t C = cfg.embed_dim, Cf = cfg.final_channels(), p = cfg.patch_size, K = cfg.num_classes;
  std::vector<ParamSpec> out;
  out.push_back({"final.up.weight", {C, Cf, p, p}, true, InitKind::normal, fan_in_scale(C)});
  out.push_back({"final.up.bias", {Cf}, true, InitKind::zeros});
  append_refine_specs(out, "final", Cf, Cf);
  out.push_back({"head.weight", {K, Cf, 1, 1}, true, InitKind::normal, fan_in_scale(Cf)});
  out.push_back({"head.bias", {K}, true, InitKind::zeros});
  return out;
}

/// tokens[(H/p)(W/p), C] -> logits[K, H, W]: stride-p transposed conv (C -> ceil(C/2)),
/// refine() without a skip, then a 1x1 convolution to the class channels.
inline Var final_expand(const Var& tokens, std::size_t h, std::size_t w, const ParamView& pv, const ModelConfig& cfg,
                        const ForwardContext& ctx) {
  require_tokens("final_expand", tokens, h, w);
  Var up = add_bias_channel(conv2d_transposed(tokens_to_chw(tokens, h, w), pv("final.up.weight"), cfg.patch_size),
                            pv("final.up.bias"));
  Var feat = refine(up, pv, "final", cfg, ctx);
  return add_bias_channel(conv2d(feat, pv("head.weight")), pv("head.bias"));
}

}  // namespace mhunet::model
