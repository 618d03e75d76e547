#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "hdl/common.hpp"

namespace hdl {

// Dense row-major n-dimensional array. Plain value type: no graph attachment.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(hdl::numel(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    HDL_CHECK(hdl::numel(shape) == static_cast<std::int64_t>(data.size()),
              "tensor: shape ", shape_str(shape), " does not match buffer of ", data.size());
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape[i]; }
  std::size_t rank() const { return shape.size(); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// Recorded computation graph. Nodes are appended in forward order, which is
// already a topological order; backward() walks them once in reverse.
// Gradients accumulate additively, so a tensor feeding several consumers
// receives the sum of their contributions.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph<T>&, int self)>;

  int add_leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, requires_grad, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int add_op(Tensor<T> value, std::vector<int> inputs, BackwardFn bw) {
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_[static_cast<std::size_t>(i)].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(bw), rg, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T>& value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_live; }

  // Gradient buffer for a node, allocated as zeros on first touch.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_live) {
      n.grad = Tensor<T>::zeros(n.value.shape);
      n.grad_live = true;
    }
    return n.grad;
  }

  // Reverse-mode sweep from a scalar root. Each recorded op runs exactly once,
  // in reverse recording order; ops that never received a gradient are skipped.
  void backward(int root) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    HDL_CHECK(r.value.numel() == 1, "backward: root must be scalar, got shape ",
              shape_str(r.value.shape));
    grad(root).data[0] = T(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.bw && n.requires_grad && n.grad_live) n.bw(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    BackwardFn bw;
    bool requires_grad;
    bool grad_live;
  };
  std::vector<Node> nodes_;
};

// Handle to one node of a graph; the unit all ops consume and produce.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape; }
  Tensor<T>& grad() const { return graph->grad(id); }
};

template <typename T>
Var<T> make_leaf(Graph<T>& g, Tensor<T> value, bool requires_grad) {
  return Var<T>{&g, g.add_leaf(std::move(value), requires_grad)};
}

}  // namespace hdl
