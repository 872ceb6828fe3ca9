#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Tape owns a creation-ordered list of nodes. Every differentiable op in
// ops.hpp appends a node holding its output value and a backprop closure that
// pushes the node's gradient into its inputs. Node ids increase strictly in
// creation order, so a reverse sweep over ids is a valid topological order.
//
// A tape is confined to one thread. Call reset() between training steps.

#include <deque>
#include <functional>
#include <map>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vidkern/core/tensor.hpp"

namespace vidkern {

using NodeId = std::size_t;

enum class OpKind {
  Constant,
  Param,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  Sigmoid,
  Tanh,
  Log,
  Exp,
  Concat,
  Slice,
  Reshape,
  Permute,
  Pick,
  SumAll,
  MeanAxis,
  MaxAxis,
  Softmax,
  LogSoftmax,
  ConvSpatial,
  ConvTemporal,
  DepthwiseTemporal,
  RoiPool3d,
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid until the tape is reset.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& dims() const { return value().dims(); }
};

struct TapeNode {
  using Backprop = std::function<void(Tape&, const TapeNode&)>;

  OpKind kind = OpKind::Constant;
  std::vector<NodeId> inputs;
  Tensor value;
  Tensor grad;  // empty until backward reaches the node
  bool requires_grad = false;
  Backprop backprop;
};

/// Parameter gradients produced by Tape::backward, keyed by node id and, for
/// parameters bound through Tape::param, by the address of the bound Tensor.
class Gradients {
 public:
  const Tensor& operator[](NodeId id) const {
    auto it = by_node_.find(id);
    if (it == by_node_.end()) throw ContractError("no gradient recorded for node " + std::to_string(id));
    return it->second;
  }

  const Tensor& of(const Tensor& param) const {
    auto it = by_address_.find(&param);
    if (it == by_address_.end()) throw ContractError("tensor was not bound as a parameter on this tape");
    return (*this)[it->second];
  }

  bool has(const Tensor& param) const { return by_address_.contains(&param); }

  const std::map<NodeId, Tensor>& by_node() const noexcept { return by_node_; }

 private:
  friend class Tape;
  std::map<NodeId, Tensor> by_node_;
  std::unordered_map<const Tensor*, NodeId> by_address_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    return push(OpKind::Constant, {}, std::move(value), false, nullptr);
  }

  /// Binds a parameter tensor. Binding the same object twice returns the same
  /// node, so shared weights accumulate a single gradient.
  Var param(const Tensor& value) {
    if (auto it = bound_.find(&value); it != bound_.end()) return Var{this, it->second};
    Var v = push(OpKind::Param, {}, value, true, nullptr);
    bound_.emplace(&value, v.id);
    params_.push_back(v.id);
    return v;
  }

  /// Unbound trainable leaf (gradient reported by node id only).
  Var leaf(Tensor value) {
    Var v = push(OpKind::Param, {}, std::move(value), true, nullptr);
    params_.push_back(v.id);
    return v;
  }

  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, TapeNode::Backprop backprop) {
    bool rg = false;
    for (NodeId i : inputs) rg = rg || nodes_.at(i).requires_grad;
    return push(kind, std::move(inputs), std::move(value), rg, rg ? std::move(backprop) : nullptr);
  }

  const TapeNode& node(NodeId id) const { return nodes_.at(id); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  void accumulate(NodeId id, const Tensor& g) {
    TapeNode& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar loss. Every parameter on the tape gets a
  /// gradient of its own dims; unreachable parameters get zeros.
  Gradients backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
    const Tensor& lv = nodes_.at(loss.id).value;
    for (std::size_t d : lv.dims()) {
      if (d != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(lv.dims()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (nodes_[loss.id].requires_grad) nodes_[loss.id].grad = Tensor(lv.dims(), 1.0);
    for (NodeId id = loss.id + 1; id-- > 0;) {
      TapeNode& n = nodes_[id];
      if (n.grad.empty() || !n.backprop) continue;
      n.backprop(*this, n);
    }
    Gradients out;
    for (NodeId p : params_) {
      const TapeNode& n = nodes_[p];
      out.by_node_.emplace(p, n.grad.empty() ? Tensor(n.value.dims()) : n.grad);
    }
    for (const auto& [addr, id] : bound_) out.by_address_.emplace(addr, id);
    return out;
  }

  void reset() {
    nodes_.clear();
    bound_.clear();
    params_.clear();
  }

 private:
  Var push(OpKind kind, std::vector<NodeId> inputs, Tensor value, bool rg, TapeNode::Backprop bp) {
    TapeNode n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backprop = std::move(bp);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::deque<TapeNode> nodes_;  // stable references: Var::value() stays valid as the tape grows
  std::unordered_map<const Tensor*, NodeId> bound_;
  std::vector<NodeId> params_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace vidkern
