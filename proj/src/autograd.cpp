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

#include "gapose/autograd.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "gapose/errors.hpp"
#include "gapose/kernels.hpp"

namespace gapose::autograd {
namespace {

std::atomic<bool>& debug_flag() {
  static std::atomic<bool> flag{[] {
    const char* env = std::getenv("GAPOSE_DEBUG_CHECKS");
    return env != nullptr && std::strcmp(env, "1") == 0;
  }()};
  return flag;
}

}  // namespace

bool debug_checks_enabled() { return debug_flag().load(std::memory_order_relaxed); }
void set_debug_checks(bool enabled) { debug_flag().store(enabled, std::memory_order_relaxed); }

Graph::Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Graph::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (debug_checks_enabled() && !all_finite(value)) {
    throw NumericError("non-finite value produced by " + std::string(op) + " with shape " +
                       to_string(value.shape()));
  }
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (!in.valid() || &in.graph() != this) throw StateError(std::string(op) + ": input from another graph");
      if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor* Graph::grad_sink(const Var& v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return &n.grad;
}

void Graph::backward(const Var& loss) {
  if (backward_done_) throw StateError("backward() called twice on the same graph without reset()");
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(root.value.shape()));
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_sink(loss)->fill(1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(n.value, n.grad);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      kernels::axpy(p.grad.size(), 1.0, n.grad.data(), p.grad.data());
    }
  }
}

void Graph::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

}  // namespace gapose::autograd
