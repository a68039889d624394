// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations whose inputs
// require gradients record themselves on the result node (inputs plus a
// backward closure); the record of a loss is recovered by a topological walk
// from that loss. Nothing is global, so independent graphs can be built and
// differentiated on different threads.
#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ubert {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Long chains would otherwise recurse once per node through shared_ptr.
  ~Node() {
    std::vector<std::shared_ptr<Node>> pending;
    auto steal = [&pending](Node& n) {
      for (auto& in : n.inputs)
        if (in && in.use_count() == 1) pending.push_back(std::move(in));
      n.inputs.clear();
    };
    steal(*this);
    while (!pending.empty()) {
      auto n = std::move(pending.back());
      pending.pop_back();
      steal(*n);
    }
  }

  bool is_leaf() const { return inputs.empty(); }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_string(shape));
    }
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    if (element_count(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " needs " +
                       std::to_string(element_count(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access for optimizers and finite-difference probes. Writing
  // to a tensor that already feeds a recorded graph invalidates that graph.
  std::span<T> mutable_data() { return node_->value; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not scalar");
    return node_->value[0];
  }
  T operator()(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no history.
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

 private:
  NodePtr node_;
};

// Ordered list of the operations reachable from a root: every node appears
// after all of its inputs.
template <std::floating_point T>
class ComputationRecord {
 public:
  using NodePtr = typename Tensor<T>::NodePtr;

  explicit ComputationRecord(const Tensor<T>& root) {
    if (!root.defined()) return;
    std::unordered_set<const detail::Node<T>*> seen;
    // iterative post-order DFS; LSTM chains get deep
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        auto child = node->inputs[next++];
        if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<NodePtr>& nodes() const { return order_; }

  bool is_topologically_ordered() const {
    std::unordered_set<const detail::Node<T>*> done;
    for (const auto& n : order_) {
      for (const auto& in : n->inputs) {
        if (!done.contains(in.get())) return false;
      }
      done.insert(n.get());
    }
    return true;
  }

 private:
  std::vector<NodePtr> order_;
};

// Accumulates d(loss)/d(t) into every reachable tensor with requires_grad.
// Leaf gradients accumulate across calls; intermediate ones are recomputed.
template <std::floating_point T>
ComputationRecord<T> backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  ComputationRecord<T> record(loss);
  if (!loss.requires_grad()) return record;
  for (const auto& n : record.nodes()) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);
  const auto& order = record.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
  return record;
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables recording on the current thread for its lifetime; used for
// inference so forward passes build no graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds a result tensor and records it when any input requires gradients.
template <std::floating_point T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> bw) {
  Tensor<T> out(std::move(shape), std::move(value));
  bool any = false;
  if (grad_mode())
    for (auto* in : inputs) any = any || in->requires_grad();
  auto& node = *out.node();
  node.op = op;
  if (any) {
    node.requires_grad = true;
    for (auto* in : inputs) node.inputs.push_back(in->node());
    node.backward = std::move(bw);
  }
  return out;
}

template <std::floating_point T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> bw) {
  Tensor<T> out(std::move(shape), std::move(value));
  bool any = false;
  if (grad_mode())
    for (const auto& in : inputs) any = any || in.requires_grad();
  auto& node = *out.node();
  node.op = op;
  if (any) {
    node.requires_grad = true;
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(bw);
  }
  return out;
}

// Gradient sink for input i, or nullptr when that input is frozen.
template <std::floating_point T>
T* grad_of(Node<T>& n, std::size_t i) {
  auto& in = *n.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.grad_buffer().data();
}

}  // namespace detail
}  // namespace ubert
