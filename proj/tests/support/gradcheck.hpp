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

// Test helpers: central finite differences and brute-force oracles.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dropdim/ops.hpp"
#include "dropdim/rng.hpp"
#include "dropdim/tape.hpp"
#include "dropdim/tensor.hpp"

namespace dropdim::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// Builds a scalar from leaf variables bound to the given tensors.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is ~0 from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares tape gradients of fn with central differences of step h for the
// leaves listed in `which` (all when empty). At most `per_input` entries of
// each input are probed (all when 0), spread evenly.
inline GradCheck check_gradients(const ScalarFn& fn, std::vector<Tensor> inputs, double h = 1e-6,
                                 std::vector<std::size_t> which = {}, std::size_t per_input = 0,
                                 double floor = 1e-3) {
  if (which.empty())
    for (std::size_t i = 0; i < inputs.size(); ++i) which.push_back(i);
  for (auto& t : inputs) t.set_requires_grad(true);

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tape.parameter(t));
    tape.backward(fn(tape, vars));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto g = inputs[i].grad();
      analytic[i].assign(g.begin(), g.end());
    }
  }
  auto eval = [&]() {
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tape.constant(t));
    return fn(tape, vars).value()[0];
  };

  GradCheck r;
  for (std::size_t i : which) {
    auto values = inputs[i].values();
    const std::size_t n = values.size();
    const std::size_t count = per_input == 0 ? n : std::min(per_input, n);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t j = count == n ? c : (c * n) / count;
      const double saved = values[j];
      values[j] = saved + h;
      const double up = eval();
      values[j] = saved - h;
      const double down = eval();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i][j], numeric, floor));
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i][j] - numeric));
      ++r.checked;
    }
  }
  return r;
}

using VectorFn = std::function<Var(Tape&, Var)>;

// Full Jacobian of a single-input map: analytic rows via one-hot output
// projections (exact: every other term is multiplied by zero), numeric
// columns via central differences read off each output entry directly.
inline GradCheck check_jacobian(const VectorFn& fn, Tensor input, double h = 1e-6,
                                double floor = 1e-12) {
  input.set_requires_grad(true);
  const std::size_t n = input.numel();
  std::size_t m = 0;
  std::vector<std::vector<double>> analytic;  // [m][n]
  {
    Tape probe;
    probe.set_grad_enabled(false);
    m = fn(probe, probe.constant(input)).value().numel();
  }
  for (std::size_t k = 0; k < m; ++k) {
    input.zero_grad();
    Tape tape;
    const Var y = fn(tape, tape.parameter(input));
    Tensor onehot(y.shape());
    onehot.values()[k] = 1.0;
    tape.backward(sum(mul(y, tape.constant(onehot))));
    analytic.emplace_back(input.grad().begin(), input.grad().end());
  }
  auto eval = [&]() {
    Tape tape;
    tape.set_grad_enabled(false);
    return fn(tape, tape.constant(input)).value().storage();
  };
  GradCheck r;
  auto values = input.values();
  for (std::size_t j = 0; j < n; ++j) {
    const double saved = values[j];
    values[j] = saved + h;
    const auto up = eval();
    values[j] = saved - h;
    const auto down = eval();
    values[j] = saved;
    for (std::size_t k = 0; k < m; ++k) {
      const double numeric = (up[k] - down[k]) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k][j], numeric, floor));
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[k][j] - numeric));
      ++r.checked;
    }
  }
  return r;
}

// Random projection to a scalar: sum(w * x) with fixed normal weights, so
// every output entry contributes with a distinct weight.
inline Var project(Var x, std::uint64_t seed = 7) {
  Rng rng(seed);
  const Tensor w = random_tensor(x.shape(), rng);
  return sum(mul(x, x.tape().constant(w)));
}

}  // namespace dropdim::testing
