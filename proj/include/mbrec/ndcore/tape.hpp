#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mbrec/ndcore/array.hpp"

namespace mbrec {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

/// Define-by-run record of a computation. Nodes are appended in evaluation
/// order, so node ids are already a topological order and backward() is a
/// single reverse sweep.
class Tape {
 public:
  // Called during the reverse sweep with the node's own id; accumulates the
  // node's gradient into the gradients of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value) { return push(std::move(value), {}, nullptr, false); }
  Var variable(Array value) { return push(std::move(value), {}, nullptr, true); }

  Var record(Array value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    return push(std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr, needs);
  }

  std::size_t size() const { return nodes_.size(); }

  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  const Array& value(Var v) const { return value(v.id); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  // Gradient of the last backward() root with respect to node `id`; zeros
  // when the node did not influence the root.
  Array grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.has_grad ? n.grad : Array(n.value.shape(), 0);
  }
  Array grad(Var v) const { return grad(v.id); }

  // Accumulation buffer for node `id`, allocated on first use.
  Array& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Array(n.value.shape(), 0);
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(Var root) {
    const Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
      throw ContractError("backward root must be scalar, got shape " +
                          shape_string(r.value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Array();
    }
    grad_buffer(root.id)[0] = 1;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backward) n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Array value;
    Array grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(Array value, std::vector<std::size_t> inputs, BackwardFn backward, bool needs) {
    nodes_.push_back(Node{std::move(value), Array(), false, needs, std::move(inputs),
                          std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace mbrec
