// Copyright 2026 The gapose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Eager, tape-based reverse-mode differentiation.
//
// A Graph records one node per operation in execution order, so every node's
// inputs precede it and reverse append order is a valid topological order.
// Parameters live outside the graph; their gradients accumulate into
// Parameter::grad when backward() runs.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gapose/tensor.hpp"

namespace gapose {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Buffers (batch-norm running statistics) are saved but never optimized.
  bool trainable = true;

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

namespace autograd {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph is alive
// and has not been reset.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Called with the node's forward value and the gradient flowing into it.
using BackwardFn = std::function<void(const Tensor& out, const Tensor& grad_out)>;

class Graph {
 public:
  // With grad_enabled == false nothing is retained for backward.
  explicit Graph(bool grad_enabled = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Leaf that tracks gradient but is not bound to a parameter (tests, inputs).
  Var variable(Tensor value);
  // Leaf bound to a parameter; the same parameter maps to the same node.
  Var param(Parameter& p);

  // Appends an operation result. `fn` is dropped when no input needs grad.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first use; nullptr when
  // the node does not need a gradient.
  Tensor* grad_sink(const Var& v);
  // Gradient accumulated so far (empty tensor when none).
  const Tensor& grad(const Var& v) const { return nodes_[v.id()].grad; }

  // Seeds d(loss)/d(loss) = 1 and propagates. Non-scalar loss -> ShapeError,
  // second call without reset() -> StateError.
  void backward(const Var& loss);

  // Drops every node and re-arms backward().
  void reset();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  bool grad_enabled_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }
inline bool Var::requires_grad() const { return graph_->requires_grad(*this); }

// True when GAPOSE_DEBUG_CHECKS=1 (read once) or forced by set_debug_checks().
bool debug_checks_enabled();
void set_debug_checks(bool enabled);

}  // namespace autograd
}  // namespace gapose
