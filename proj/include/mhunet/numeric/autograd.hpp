#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhunet/numeric/tensor.hpp"

namespace mhunet {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

/// Gradient buffers handed to a node's backward function, one per recorded input.
/// Inputs that are not on the tape get an empty span.
using ParentGrads = std::vector<std::span<real>>;

/// Vector-Jacobian product of one recorded operation: accumulate (+=) the input
/// gradients given the output gradient.
using BackwardFn = std::function<void(std::span<const real> grad_out, ParentGrads& grads)>;

/// Append-only record of differentiable operations. Parents always precede children,
/// so a reverse sweep over node ids is a valid topological order.
class GradTape {
 public:
  struct Node {
    std::string_view op;
    std::vector<NodeId> parents;  // kNoNode for constant inputs
    std::size_t numel = 0;
    BackwardFn backward;  // empty for leaves
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Registers a named leaf. Names must be unique per tape.
  NodeId leaf(const std::string& name, const Tensor& value) {
    if (leaves_.count(name)) throw ContractError("duplicate leaf name '" + name + "'");
    NodeId id = nodes_.size();
    nodes_.push_back(Node{"leaf", {}, value.size(), {}});
    leaves_.emplace(name, id);
    leaf_shapes_.emplace(name, value.shape());
    return id;
  }

  NodeId record(std::string_view op, std::vector<NodeId> parents, std::size_t numel,
                BackwardFn backward) {
    NodeId id = nodes_.size();
    for (auto p : parents)
      if (p != kNoNode && p >= id) throw ContractError("tape parent does not precede child");
    nodes_.push_back(Node{op, std::move(parents), numel, std::move(backward)});
    return id;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::map<std::string, NodeId>& leaves() const noexcept { return leaves_; }

  /// Reverse sweep from a scalar node. Returns a gradient for every registered leaf;
  /// leaves the output does not depend on get zeros.
  std::map<std::string, Tensor> backward(NodeId output) const {
    if (output >= nodes_.size()) throw ContractError("backward: unknown node");
    if (nodes_[output].numel != 1)
      throw ContractError("backward: output must be scalar, has " +
                          std::to_string(nodes_[output].numel) + " elements");

    std::vector<std::vector<real>> grad(nodes_.size());
    std::vector<bool> is_leaf(nodes_.size(), false);
    for (const auto& [name, id] : leaves_) is_leaf[id] = true;

    grad[output].assign(1, real(1));
    ParentGrads spans;
    for (NodeId i = output + 1; i-- > 0;) {
      if (grad[i].empty()) continue;
      const Node& n = nodes_[i];
      if (!n.backward) continue;
      spans.assign(n.parents.size(), {});
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        NodeId p = n.parents[k];
        if (p == kNoNode) continue;
        if (grad[p].empty()) grad[p].assign(nodes_[p].numel, real(0));
        spans[k] = std::span<real>(grad[p]);
      }
      n.backward(std::span<const real>(grad[i]), spans);
      if (!is_leaf[i]) std::vector<real>().swap(grad[i]);
    }

    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : leaves_) {
      const Shape& shape = leaf_shapes_.at(name);
      if (grad[id].empty())
        out.emplace(name, Tensor::zeros(shape));
      else
        out.emplace(name, Tensor(shape, std::move(grad[id])));
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaves_;
  std::map<std::string, Shape> leaf_shapes_;
};

/// A tensor value plus (optionally) its node on a tape. Untracked Vars are constants.
class Var {
 public:
  Var() = default;
  Var(Tensor value) : value_(std::move(value)) {}  // NOLINT(implicit): constants convert freely
  Var(Tensor value, GradTape* tape, NodeId node)
      : value_(std::move(value)), tape_(tape), node_(node) {}

  const Tensor& value() const noexcept { return value_; }
  const Shape& shape() const noexcept { return value_.shape(); }
  std::size_t size() const noexcept { return value_.size(); }
  std::span<const real> data() const noexcept { return value_.data(); }

  bool tracked() const noexcept { return tape_ != nullptr; }
  GradTape* tape() const noexcept { return tape_; }
  NodeId node() const noexcept { return node_; }

 private:
  Tensor value_;
  GradTape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

/// Registers `value` as a named leaf on `tape` and returns the tracked Var.
inline Var watch(GradTape& tape, const std::string& name, const Tensor& value) {
  return Var(value.with_requires_grad(true), &tape, tape.leaf(name, value));
}

namespace detail {

/// Wraps a computed result, recording a node when any input is tracked.
inline Var make_result(std::string_view op, Tensor result, std::initializer_list<const Var*> inputs,
                       BackwardFn backward) {
  GradTape* tape = nullptr;
  for (const Var* v : inputs) {
    if (!v->tracked()) continue;
    if (tape && tape != v->tape()) throw ContractError("inputs recorded on different tapes");
    tape = v->tape();
  }
  if (!tape) return Var(std::move(result));
  std::vector<NodeId> parents;
  parents.reserve(inputs.size());
  for (const Var* v : inputs) parents.push_back(v->tracked() ? v->node() : kNoNode);
  NodeId id = tape->record(op, std::move(parents), result.size(), std::move(backward));
  return Var(std::move(result), tape, id);
}

}  // namespace detail

/// Backward of a scalar Var that lives on a tape.
inline std::map<std::string, Tensor> backward(const Var& scalar_output) {
  if (!scalar_output.tracked()) throw ContractError("backward: output is not on a tape");
  return scalar_output.tape()->backward(scalar_output.node());
}

}  // namespace mhunet
