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

#include "dropdim/tape.hpp"

// Differentiable tensor ops. Every op records itself on the tape owning its
// inputs; mixing tapes is an error. Shapes must match exactly except where
// noted: batched matmul broadcasts a rank-2 right operand across the batch,
// and add_bias broadcasts a vector along the last axis.
namespace dropdim {

// [M,K]x[K,N], [B,M,K]x[B,K,N], or [B,M,K]x[K,N].
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// x[..., j] + bias[j]
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var relu(Var x);
// Softmax over the last axis with max-subtraction.
Var softmax_rows(Var x);
// Normalizes over the last axis, then applies gain/bias (both length D).
// Rows with zero variance and eps == 0 normalize to zeros.
Var layernorm(Var x, Var gain, Var bias, double eps);
// table [V,D], ids laid out as [B,T] -> [B,T,D].
Var embedding_lookup(Var table, std::span<const int> ids, std::size_t batch, std::size_t steps);
// Concatenates along the last axis; leading dims must agree.
Var concat(std::span<const Var> parts);
// Swaps the two innermost axes of a rank-2 or rank-3 tensor.
Var transpose(Var x);
Var sum(Var x);
Var mean(Var x);

// [B,T,D] -> [B*H,T,D/H], head h of example b at batch index b*H+h.
Var split_heads(Var x, std::size_t heads);
Var merge_heads(Var x, std::size_t heads);
// Keeps time steps 0, stride, 2*stride, ... of a [B,T,D] tensor.
Var subsample_time(Var x, std::size_t stride);

// Mean over non-pad positions of KL(q || softmax(logits)) where q puts
// 1-epsilon on the gold token and epsilon/(V-1) on every other token.
// logits: [B,T,V]; targets: B*T ids, pad_id marks ignored positions.
Var cross_entropy_label_smoothed(Var logits, std::span<const int> targets, double epsilon,
                                 int pad_id);

// Raw dense kernel: C[M,N] (+)= A[M,K] * B[K,N], row-major, optional
// transposes of either operand. Exposed for benchmarks.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool transpose_a, bool transpose_b,
          bool accumulate);

}  // namespace dropdim
