#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mhunet/errors.hpp"
#include "mhunet/numeric/autograd.hpp"
#include "mhunet/numeric/random.hpp"
#include "mhunet/numeric/tensor.hpp"

namespace mhunet::model {

/// Ordered collection of named tensors. Trainable entries receive gradients; the rest are
/// buffers (batch-norm running statistics) updated outside the optimizer.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(std::string name, Tensor value, bool trainable = true) {
    if (index_.count(name)) throw ContractError("ParameterSet: duplicate name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const { return entries_[position(name)].value; }

  void set(const std::string& name, Tensor value) {
    Entry& e = entries_[position(name)];
    if (value.shape() != e.value.shape())
      throw DimensionError("ParameterSet: '" + name + "' expects " + shape_str(e.value.shape()) + ", got " +
                           shape_str(value.shape()));
    e.value = std::move(value);
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  /// Same names, trainability, and bit-identical values.
  bool identical(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.trainable != b.trainable || !a.value.identical(b.value)) return false;
    }
    return true;
  }

 private:
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParameterSet: no entry named '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// How a parameter is initialized.
enum class InitKind {
  zeros,
  ones,
  normal,      // N(0, scale^2)
  a_log,       // log(s + 1) for state s, so A = -exp(A_log) starts at the HiPPO-LegS diagonal
  delta_bias,  // inverse softplus of a step size drawn log-uniformly from [1e-3, 1e-1]
};

struct ParamSpec {
  std::string name;
  Shape shape;
  bool trainable = true;
  InitKind init = InitKind::zeros;
  real scale = 1;
};

inline Tensor initial_value(const ParamSpec& spec, RandomSource rng) {
  std::vector<real> d(shape_numel(spec.shape));
  switch (spec.init) {
    case InitKind::zeros: break;
    case InitKind::ones: std::fill(d.begin(), d.end(), real(1)); break;
    case InitKind::normal:
      for (auto& v : d) v = spec.scale * static_cast<real>(rng.normal());
      break;
    case InitKind::a_log: {
      const std::size_t n = spec.shape.back();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::log(real(i % n + 1));
      break;
    }
    case InitKind::delta_bias:
      for (auto& v : d) {
        const real dt = std::exp(static_cast<real>(rng.uniform(std::log(1e-3), std::log(1e-1))));
        v = dt + std::log(-std::expm1(-dt));  // softplus^{-1}(dt)
      }
      break;
  }
  return Tensor(spec.shape, std::move(d));
}

/// Builds a ParameterSet from a layout; entry k draws from rng(seed).fork(k).
inline ParameterSet materialize(const std::vector<ParamSpec>& layout, std::uint64_t seed) {
  RandomSource root(seed);
  ParameterSet ps;
  for (std::size_t k = 0; k < layout.size(); ++k)
    ps.add(layout[k].name, initial_value(layout[k], root.fork(k)), layout[k].trainable);
  return ps;
}

/// Parameters as Vars: trainable entries are watched on a tape when one is given,
/// everything else is a constant.
class ParamView {
 public:
  explicit ParamView(const ParameterSet& ps) : ps_(&ps) {}

  ParamView(const ParameterSet& ps, GradTape& tape) : ps_(&ps) {
    for (const auto& e : ps.entries())
      if (e.trainable) watched_.emplace(e.name, watch(tape, e.name, e.value));
  }

  /// Explicit bindings; names not in `bound` fall back to constants from `ps`.
  ParamView(const ParameterSet& ps, std::map<std::string, Var> bound) : ps_(&ps), watched_(std::move(bound)) {}

  Var operator()(const std::string& name) const {
    auto it = watched_.find(name);
    return it != watched_.end() ? it->second : Var(ps_->get(name));
  }

  const Tensor& raw(const std::string& name) const { return ps_->get(name); }

 private:
  const ParameterSet* ps_;
  std::map<std::string, Var> watched_;
};

}  // namespace mhunet::model
