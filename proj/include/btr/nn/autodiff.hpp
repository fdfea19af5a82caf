#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "btr/nn/tensor.hpp"

namespace btr::nn {

/// One value in a recorded computation. Nodes that require gradients keep
/// their parents alive and carry a closure that pushes their gradient into
/// the parents' buffers; everything else is a plain value holder.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  // Leaf parameters forward their accumulated gradient here after the sweep.
  Tensor* grad_sink = nullptr;

  Tensor& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int rows() const { return node_->value.rows(); }
  int cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient after backward(); empty when nothing flowed here.
  const Tensor& grad() const { return node_->grad; }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Value that never receives gradient.
Var constant(Tensor value);

/// Differentiable leaf. When `sink` is given, backward() adds the leaf's
/// gradient into it at the end of the sweep.
Var leaf(Tensor value, Tensor* sink = nullptr);

/// Builds the result node of an op. The node only records parents and the
/// closure when at least one input requires gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Reverse sweep from a scalar. Gradients accumulate: calling backward twice
/// on graphs sharing parameter sinks adds both contributions.
void backward(const Var& loss);

}  // namespace btr::nn
