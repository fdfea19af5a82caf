#include "btr/nn/autodiff.hpp"

#include <unordered_set>

#include "btr/common/error.hpp"

namespace btr::nn {

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value, Tensor* sink) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->grad_sink = sink;
  return Var(std::move(node));
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by a tensor op");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (Var& v : inputs) node->parents.push_back(v.ptr());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss) throw ArgumentError("backward: empty variable");
  if (loss.value().size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion
  // depth limits on long graphs.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Node buffers hold this sweep only; accumulation across sweeps happens in
  // the sinks.
  for (Node* n : order) n->grad = Tensor();
  loss.node().ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.size() != n->value.size()) continue;  // no gradient reached it
    if (n->backward) n->backward(*n);
    if (n->grad_sink != nullptr) {
      Tensor& sink = *n->grad_sink;
      if (sink.size() != n->grad.size()) throw DimensionError("backward: gradient sink shape mismatch");
      for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += n->grad[i];
    }
  }
}

}  // namespace btr::nn
