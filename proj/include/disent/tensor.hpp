#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace disent {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline void check_shape_valid(const Shape& s) {
  for (auto d : s) {
    if (d <= 0) throw std::invalid_argument("tensor shape must have positive dims, got " + shape_str(s));
  }
}

// Graph-wide gradient switch. Ops record no graph while disabled.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily; empty means all zeros
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Accumulates this node's grad into the grads of its inputs.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value handle with shared graph node. Copies alias the same node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    check_shape_valid(shape);
    auto n = std::make_shared<Node<T>>();
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<T> value, bool requires_grad = false) {
    check_shape_valid(shape);
    if (static_cast<std::int64_t>(value.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor data size " + std::to_string(value.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  // Leaf-level switch used to freeze parameters: ops treat a non-tracking
  // tensor as a constant and skip building graph edges into it.
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& mutable_value() { return node_->value; }

  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  std::vector<T>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor, shape is " + shape_str(shape()));
    return node_->value[0];
  }

  // Leaf copy of the current value, cut off from the graph.
  Tensor detach() const { return from_data(node_->shape, node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1 and
  // accumulates into the grad of every reachable node that requires grad.
  void backward() const {
    if (numel() != 1) throw std::invalid_argument("backward() requires a scalar root, shape is " + shape_str(shape()));
    if (!node_->requires_grad) {
      throw std::invalid_argument("backward() called on a tensor that does not require grad");
    }

    // Iterative post-order DFS: topo gets every reachable node before any of
    // its inputs' positions are final, so the reverse walk is a valid
    // topological order for grad accumulation.
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [cur, idx] = stack.back();
      if (idx < cur->inputs.size()) {
        Node<T>* child = cur->inputs[idx].get();
        ++idx;
        if (child->requires_grad && !visited.count(child)) {
          visited.insert(child);
          stack.emplace_back(child, 0);
        }
      } else {
        topo.push_back(cur);
        stack.pop_back();
      }
    }

    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result node. With grad mode off, or when no input needs grad,
// the result is a plain leaf and the graph is not extended.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> inputs,
                  std::function<void(Node<T>&)> backward_fn) {
  check_shape_valid(shape);
  if (static_cast<std::int64_t>(value.size()) != shape_numel(shape)) {
    throw std::logic_error("make_op: value size does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace disent
