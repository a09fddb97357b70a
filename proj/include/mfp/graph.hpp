#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mfp/tensor.hpp"

namespace mfp {

template <typename T>
class Graph;

// Handle to one node of a Graph. Cheap to copy; only valid while the graph
// that produced it is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  std::size_t id() const { return id_; }
  Graph<T>& graph() const { return *graph_; }
  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(std::size_t axis) const { return value().dim(axis); }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Parameter name -> gradient, one entry per named leaf of the graph.
template <typename T>
class GradientSet {
 public:
  void set(const std::string& name, Tensor<T> grad) { grads_.insert_or_assign(name, std::move(grad)); }
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ContractError("no gradient recorded for '" + name + "'");
    return it->second;
  }
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::string, Tensor<T>> grads_;
};

// Tape of operations in creation order. Creation order is a topological
// order: a node can only consume ids that already exist.
template <typename T>
class Graph {
 public:
  // Reads grad_output(self) and accumulates into grad_buffer(input) for each
  // input that requires a gradient.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Named learnable leaf; always receives an entry in the GradientSet.
  Var<T> parameter(std::string name, Tensor<T> value) {
    Node n;
    n.op = "parameter";
    n.name = std::move(name);
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
  }

  // Unnamed leaf, e.g. a network input. Gradients are available through grad().
  Var<T> input(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var<T> constant(Tensor<T> value) { return input(std::move(value), false); }

  // Appends an op node. The node requires a gradient iff any input does.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    n.op = std::string(op);
    n.value = std::move(value);
    for (auto id : inputs) {
      if (id >= nodes_.size()) throw ContractError("graph input id out of range");
      n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  std::size_t size() const { return nodes_.size(); }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient flowing into node `id`'s output during backward.
  const Tensor<T>& grad_output(std::size_t id) const { return *nodes_.at(id).grad; }

  // Gradient accumulator of node `id`, zero-initialised on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(n.value.shape(), T(0));
    return *n.grad;
  }

  // Reverse sweep from a scalar node. Every node up to `loss` is visited at
  // most once, in reverse creation order.
  GradientSet<T> backward(const Var<T>& loss) {
    if (&loss.graph() != this) throw ContractError("loss belongs to another graph");
    if (loss.value().numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    grad_buffer(loss.id()).fill(T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad && n.backward) n.backward(*this, i);
    }
    GradientSet<T> out;
    for (auto& n : nodes_) {
      if (n.op != "parameter") continue;
      out.set(n.name, n.grad ? *n.grad : Tensor<T>(n.value.shape(), T(0)));
    }
    return out;
  }

  // Gradient of any node after backward(); zeros when unreachable.
  Tensor<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    return n.grad ? *n.grad : Tensor<T>(n.value.shape(), T(0));
  }

 private:
  struct Node {
    std::string op;
    std::string name;
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace mfp
