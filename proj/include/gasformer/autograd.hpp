/*
 * Copyright (c) 2026, The Gasformer C++ Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gasformer/error.hpp"
#include "gasformer/tensor.hpp"

namespace gasformer {

template <typename T>
class Tape;

/// Handle to a node on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// the id order is a topological order and backward walks it in reverse.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
    bool differentiable = true;
  };

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Appends the result of `op`. `backward` receives the tape and the id of
  /// the new node and must accumulate into the inputs' gradients.
  Var<T> record(std::string op, Tensor<T> value, std::vector<int> inputs, Backward backward) {
    if (!value.all_finite()) throw NumericError("non-finite value produced by op '" + op + "'");
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    for (int i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Records an op that has no adjoint. Backward through it raises
  /// UnsupportedOpError.
  Var<T> record_opaque(std::string op, Tensor<T> value, std::vector<int> inputs) {
    Var<T> v = record(std::move(op), std::move(value), std::move(inputs), nullptr);
    nodes_.back().differentiable = false;
    return v;
  }

  const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(id); }

  /// Gradient buffer of `id`, allocated zero-filled on first access.
  Tensor<T>& grad_buffer(int id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  const Tensor<T>& grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) throw Error("no gradient recorded for node " + std::to_string(v.id));
    return n.grad;
  }

  bool has_grad(Var<T> v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Runs reverse accumulation from a scalar loss.
  void backward(Var<T> loss) {
    const Node& ln = nodes_.at(loss.id);
    if (ln.value.size() != 1) throw DimensionError("backward requires a scalar loss, got " + shape_str(ln.value.shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty() || n.inputs.empty()) continue;
      if (!n.differentiable || !n.backward)
        throw UnsupportedOpError("op '" + n.op + "' has no registered adjoint");
      n.backward(*this, id);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace gasformer
