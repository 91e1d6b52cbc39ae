#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mhunet/errors.hpp"
#include "mhunet/numeric/ops.hpp"
#include "mhunet/ssm/selective_scan.hpp"

namespace mhunet::model {

struct ModelConfig {
  std::size_t patch_size = 4;
  std::size_t embed_dim = 96;
  std::vector<std::size_t> stage_depths{2, 2, 2, 2};
  std::size_t state_dim = 16;
  std::size_t num_classes = 2;
  double dropout_rate = 0.1;
  ActivationKind activation = ActivationKind::silu;
  ssm::Discretization rule = ssm::Discretization::bilinear;
  std::size_t input_extent = 256;
  /// Width multiplier of the VSS inner branch.
  std::size_t expand = 2;

  std::size_t num_stages() const noexcept { return stage_depths.size(); }
  std::size_t stage_channels(std::size_t i) const noexcept { return embed_dim << i; }
  std::size_t stage_extent(std::size_t i) const noexcept { return (input_extent / patch_size) >> i; }
  /// Channels of the full-resolution refinement stage after the last expansion.
  std::size_t final_channels() const noexcept { return (embed_dim + 1) / 2; }

  static ModelConfig base() { return ModelConfig{}; }

  /// Fewer channels and a higher dropout rate than the base model.
  static ModelConfig lighter() {
    ModelConfig c;
    c.embed_dim = 16;
    c.dropout_rate = 0.2;
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline const char* activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::silu: return "silu";
    case ActivationKind::softplus: return "softplus";
    case ActivationKind::softmax_channel: return "softmax";
  }
  return "?";
}

inline ActivationKind parse_activation(const std::string& s) {
  if (s == "silu") return ActivationKind::silu;
  if (s == "softmax") return ActivationKind::softmax_channel;
  if (s == "softplus") return ActivationKind::softplus;
  throw ConfigError("unknown activation '" + s + "' (expected silu or softmax)");
}

inline const char* rule_name(ssm::Discretization r) {
  return r == ssm::Discretization::bilinear ? "bilinear" : "zoh";
}

inline ssm::Discretization parse_rule(const std::string& s) {
  if (s == "bilinear") return ssm::Discretization::bilinear;
  if (s == "zoh") return ssm::Discretization::zoh;
  throw ConfigError("unknown discretization '" + s + "' (expected bilinear or zoh)");
}

inline void validate(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("ModelConfig: ") + name + " must be positive");
  };
  positive(c.patch_size, "patch_size");
  positive(c.embed_dim, "embed_dim");
  positive(c.state_dim, "state_dim");
  positive(c.num_classes, "num_classes");
  positive(c.input_extent, "input_extent");
  positive(c.expand, "expand");
  if (c.stage_depths.empty()) throw ConfigError("ModelConfig: stage_depths must not be empty");
  if (c.stage_depths.size() > 8) throw ConfigError("ModelConfig: at most 8 stages");
  for (auto d : c.stage_depths) positive(d, "stage depth");
  if (c.num_classes < 2) throw ConfigError("ModelConfig: num_classes must be >= 2");
  if (!(c.dropout_rate >= 0 && c.dropout_rate < 1)) throw ConfigError("ModelConfig: dropout_rate must be in [0,1)");
  if (c.activation == ActivationKind::softplus) throw ConfigError("ModelConfig: activation must be silu or softmax");
  const std::size_t unit = c.patch_size << (c.num_stages() - 1);
  if (c.input_extent % unit != 0)
    throw ConfigError("ModelConfig: input extent " + std::to_string(c.input_extent) + " is not divisible by " +
                      std::to_string(unit) + " (patch_size * 2^(stages-1))");
}

}  // namespace mhunet::model
