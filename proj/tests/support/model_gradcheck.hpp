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

// End-to-end gradient check of a transformer's training loss.

#include <cstdint>

#include "dropdim/transformer.hpp"
#include "gradcheck.hpp"

namespace dropdim::testing {

// Loss gradient w.r.t. `samples` random parameter entries against central
// differences. Train mode, with regularizer masks frozen by reseeding the rng
// on every evaluation.
inline GradCheck model_gradcheck(model::Transformer& model, const model::Batch& batch,
                                 std::size_t samples, std::uint64_t pick_seed,
                                 double h = 1e-6) {
  auto loss_at = [&](bool grad) {
    Rng rng(99);
    Tape tape;
    tape.set_grad_enabled(grad);
    model::ForwardContext ctx;
    ctx.mode = model::Mode::train;
    ctx.rng = &rng;
    const Var l = model.loss(tape, batch, ctx);
    if (grad) tape.backward(l);
    return l.value()[0];
  };
  model.parameters().zero_grad();
  loss_at(true);
  auto& entries = model.parameters().entries();
  Rng pick(pick_seed);
  GradCheck r;
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor& t = entries[pick.uniform_int(entries.size())].second;
    const std::size_t j = pick.uniform_int(t.numel());
    const double analytic = t.grad()[j];
    const double saved = t.values()[j];
    t.values()[j] = saved + h;
    const double up = loss_at(false);
    t.values()[j] = saved - h;
    const double down = loss_at(false);
    t.values()[j] = saved;
    const double numeric = (up - down) / (2 * h);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
    r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
    ++r.checked;
  }
  return r;
}

}  // namespace dropdim::testing
