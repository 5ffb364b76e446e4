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
#include <span>
#include <vector>

#include "dropdim/rng.hpp"
#include "dropdim/structured_dropout.hpp"
#include "dropdim/tape.hpp"

// Differentiable (train-mode) counterparts of the pure regularizers. Each
// consumes the rng in exactly the order of its pure counterpart, so the same
// seed yields the same masks on either path.
namespace dropdim::reg {

// h is [B,T,D]; masks[b] applies to example b. Backward masks and scales the
// incoming gradient identically.
Var dim_mask(Var h, std::span<const DimMask> masks);

// Element-wise multiply by constant factors of the same size as h.
Var scale_elements(Var h, std::vector<double> factors);

Var dropout(Var h, double p, Rng& rng);

// attn is row-stochastic along its last axis.
Var dropattention(Var attn, double p, Rng& rng);

// per_head is [B*H,T,d] laid out as produced by split_heads. One head-keep
// draw per example.
Var drophead(Var per_head, std::size_t heads, double p, Rng& rng);

}  // namespace dropdim::reg
