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
#include "dropdim/tape.hpp"

#include <cassert>
#include <stdexcept>

#include "dropdim/errors.hpp"

namespace dropdim {

Var Tape::constant(Tensor value) {
  if (sealed_) throw std::logic_error("tape already consumed by backward()");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& parameter) {
  if (sealed_) throw std::logic_error("tape already consumed by backward()");
  const bool needs = grad_enabled_ && parameter.requires_grad();
  nodes_.push_back(Node{{}, {}, {}, {}, needs ? &parameter : nullptr, &parameter, needs});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (sealed_) throw std::logic_error("tape already consumed by backward()");
  assert(value.all_finite() && "op produced NaN/Inf");
  bool needs = false;
  if (grad_enabled_) {
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).needs_grad;
  }
  Node node{std::move(value), {}, std::move(inputs), {}, nullptr, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_of(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(value(id).numel(), 0.0);
  return node.grad;
}

std::span<const double> Tape::grad(Var v) const { return nodes_.at(v.id()).grad; }

void Tape::backward(Var root) {
  if (&root.tape() != this) throw std::logic_error("backward() on a foreign tape");
  if (sealed_) throw std::logic_error("backward() called twice on one tape");
  if (root.value().numel() != 1) {
    throw DimensionError("backward() needs a scalar root, got " + root.shape().str());
  }
  sealed_ = true;
  if (!nodes_[root.id()].needs_grad) return;
  grad_of(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(node.grad, *this);
    if (node.parameter != nullptr) node.parameter->accumulate_grad(node.grad);
  }
}

}  // namespace dropdim
