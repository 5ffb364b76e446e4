// Copyright 2026 The DropDim Lab Authors. All Rights Reserved.
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
// =============================================================================
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "dropdim/tensor.hpp"

namespace dropdim {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the gradient of the node's output and accumulates into the
// gradients of its inputs through Tape::grad_of.
using BackwardFn = std::function<void(std::span<const double> out_grad, Tape& tape)>;

// Records one forward pass in topological order. backward() walks the
// records once in reverse and then seals the tape; a tape is not reused.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives gradient.
  Var constant(Tensor value);
  // Leaf bound to an external parameter, read in place: the parameter must
  // outlive the tape and stay unmodified until backward() returns. If it
  // requires grad, backward() adds this leaf's gradient into
  // parameter.grad().
  Var parameter(Tensor& parameter);

  // Appends an op node. `backward` is only kept when some input needs a
  // gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var root);

  const Tensor& value(std::size_t id) const {
    const Node& node = nodes_.at(id);
    return node.borrowed != nullptr ? *node.borrowed : node.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  // Gradient buffer of a node, allocated as zeros on first use.
  std::span<double> grad_of(std::size_t id);
  // Gradient accumulated so far; empty if the node never received one.
  std::span<const double> grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool sealed() const { return sealed_; }

  // Disable to skip backward bookkeeping entirely (evaluation passes).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* parameter = nullptr;
    const Tensor* borrowed = nullptr;
    bool needs_grad = false;
  };

  // deque keeps value references stable while the tape grows.
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool sealed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace dropdim
