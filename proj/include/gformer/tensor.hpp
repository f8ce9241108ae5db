// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with a dynamically recorded reverse-mode graph.
//
// A Tensor is a cheap handle onto a shared Node. Every differentiable op
// creates a new Node that remembers its inputs and a closure that pushes the
// node's gradient back into them. Nodes are never mutated after creation
// except for leaf parameters (optimizer updates) and gradient buffers.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gformer/errors.hpp"

namespace gformer {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows here
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  /// Gradient buffer, zero-allocated on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Graph recording is on by default; NoGradGuard disables it per thread.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Per-thread multiply-accumulate counter. Forward matmul and conv2d
/// contribute; backward passes and elementwise ops do not.
class FlopCounter {
 public:
  static std::uint64_t value();
  static void reset();
  static void add(std::uint64_t macs);
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;
  using BackwardFn = std::function<void(Node<T>&)>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (gformer::numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                           std::to_string(gformer::numel(shape)) + " scalars but " +
                           std::to_string(data.size()) + " were given");
    }
    for (std::size_t extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive: " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->data.size(), T(0));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = gformer::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  /// Result of an op. Records the graph edge only when grad mode is on and
  /// at least one input takes part in differentiation.
  static Tensor from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                        std::string op, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->op = std::move(op);
    out.node_->backward = std::move(backward);
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  std::span<const T> data() const { return node_->data; }
  /// Writable storage; intended for leaves (initializers, optimizers).
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  /// Accumulated gradient; all zeros when nothing has flowed yet.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  /// Same values, no graph history, no gradient.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Nodes reachable from `root`, every node after all of its inputs.
template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor that requires grad; unreachable parameters keep whatever
/// (typically zero) gradient they already hold.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace gformer
