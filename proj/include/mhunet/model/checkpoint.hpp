#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mhunet/byte_stream.hpp"
#include "mhunet/errors.hpp"
#include "mhunet/model/config.hpp"
#include "mhunet/model/network.hpp"
#include "mhunet/model/parameters.hpp"

// Checkpoint container, all integers and floats little-endian:
//   "MHUN" | u32 version
//   config: u32 patch_size | u32 embed_dim | u32 stage count | u32 depth x count | u32 state_dim |
//           u32 num_classes | f64 dropout_rate | u8 activation | u8 rule | u32 input_extent | u32 expand
//   u32 tensor count, then per tensor:
//           u32 name length | name bytes | u8 dtype (1 = f32, 2 = f64) | u32 rank | u32 extent x rank | values

namespace mhunet::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

using mhunet::ByteReader;
using mhunet::ByteWriter;

inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::uint8_t kDtypeF64 = 2;

}  // namespace detail

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
};

inline std::vector<std::uint8_t> serialize_checkpoint(const ModelConfig& cfg, const ParameterSet& params) {
  detail::ByteWriter w;
  w.raw("MHUN");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(cfg.patch_size));
  w.u32(static_cast<std::uint32_t>(cfg.embed_dim));
  w.u32(static_cast<std::uint32_t>(cfg.stage_depths.size()));
  for (auto d : cfg.stage_depths) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(cfg.state_dim));
  w.u32(static_cast<std::uint32_t>(cfg.num_classes));
  w.f64(cfg.dropout_rate);
  w.u8(static_cast<std::uint8_t>(cfg.activation));
  w.u8(static_cast<std::uint8_t>(cfg.rule));
  w.u32(static_cast<std::uint32_t>(cfg.input_extent));
  w.u32(static_cast<std::uint32_t>(cfg.expand));

  w.u32(static_cast<std::uint32_t>(params.size()));
  constexpr bool is_f32 = sizeof(real) == sizeof(float);
  for (const auto& e : params.entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name);
    w.u8(is_f32 ? detail::kDtypeF32 : detail::kDtypeF64);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (auto x : e.value.shape()) w.u32(static_cast<std::uint32_t>(x));
    for (real v : e.value.data()) {
      if constexpr (is_f32)
        w.f32(static_cast<float>(v));
      else
        w.f64(static_cast<double>(v));
    }
  }
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.raw(4, "magic") != "MHUN") throw ParseError("magic", "checkpoint: bad magic (expected MHUN)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw ParseError("version", "checkpoint: unsupported version " + std::to_string(version));

  ModelConfig cfg;
  cfg.patch_size = r.u32("patch_size");
  cfg.embed_dim = r.u32("embed_dim");
  const auto stages = r.u32("stage_count");
  if (stages == 0 || stages > 8) throw ParseError("stage_count", "checkpoint: stage count out of range");
  cfg.stage_depths.resize(stages);
  for (auto& d : cfg.stage_depths) d = r.u32("stage_depths");
  cfg.state_dim = r.u32("state_dim");
  cfg.num_classes = r.u32("num_classes");
  cfg.dropout_rate = r.f64("dropout_rate");
  const auto act = r.u8("activation");
  const auto rule = r.u8("rule");
  if (act > 2) throw ParseError("activation", "checkpoint: unknown activation tag");
  if (rule > 1) throw ParseError("rule", "checkpoint: unknown discretization tag");
  cfg.activation = static_cast<ActivationKind>(act);
  cfg.rule = static_cast<ssm::Discretization>(rule);
  cfg.input_extent = r.u32("input_extent");
  cfg.expand = r.u32("expand");
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    throw ParseError("config", std::string("checkpoint: invalid config: ") + e.what());
  }

  const auto layout = parameter_layout(cfg);
  const auto count = r.u32("tensor_count");
  if (count != layout.size())
    throw ParseError("tensor_count", "checkpoint: " + std::to_string(count) + " tensors, config implies " +
                                         std::to_string(layout.size()));
  ParameterSet ps;
  for (const auto& spec : layout) {
    const auto len = r.u32("name_length");
    const std::string name = r.raw(len, "name");
    if (name != spec.name)
      throw ParseError("name", "checkpoint: expected tensor '" + spec.name + "', found '" + name + "'");
    const auto dtype = r.u8("dtype");
    if (dtype != detail::kDtypeF32 && dtype != detail::kDtypeF64)
      throw ParseError("dtype", "checkpoint: unknown dtype tag " + std::to_string(dtype));
    const auto rank = r.u32("rank");
    if (rank != spec.shape.size())
      throw ParseError("rank", "checkpoint: '" + name + "' has rank " + std::to_string(rank) + ", expected " +
                                   std::to_string(spec.shape.size()));
    Shape shape(rank);
    for (auto& x : shape) x = r.u32("extent");
    if (shape != spec.shape)
      throw ParseError("extent", "checkpoint: '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                     shape_str(spec.shape));
    const std::size_t width = dtype == detail::kDtypeF32 ? 4 : 8;
    if (r.remaining() / width < shape_numel(shape))
      throw ParseError("values", "checkpoint: payload of '" + name + "' is truncated");
    std::vector<real> values(shape_numel(shape));
    for (auto& v : values)
      v = dtype == detail::kDtypeF32 ? static_cast<real>(r.f32("values")) : static_cast<real>(r.f64("values"));
    ps.add(name, Tensor(shape, std::move(values)), spec.trainable);
  }
  if (!r.at_end()) throw ParseError("trailer", "checkpoint: trailing bytes after last tensor");
  return Checkpoint{cfg, std::move(ps)};
}

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParameterSet& params) {
  const auto bytes = serialize_checkpoint(cfg, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace mhunet::model
