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
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "dropdim/ops.hpp"
#include "dropdim/rng.hpp"
#include "dropdim/structured_dropout.hpp"
#include "dropdim/tape.hpp"
#include "dropdim/transformer.hpp"
#include "dropdim/vocab.hpp"

namespace {

using namespace dropdim;
using namespace dropdim::model;

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random_values(n * n, rng);
  const auto b = random_values(n * n, rng);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    gemm(a, b, c, n, n, n, false, false, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_MaskRandom(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(reg::sample_dim_mask_random(dim, 0.1, rng));
}
BENCHMARK(BM_MaskRandom)->Arg(64)->Arg(256);

void BM_MaskSpan(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(reg::sample_dim_mask_span(dim, dim / 8, rng));
}
BENCHMARK(BM_MaskSpan)->Arg(64)->Arg(256);

void BM_ApplyDimMask(benchmark::State& state) {
  Rng rng(4);
  Tensor h(Shape{32, 256}, random_values(32 * 256, rng));
  const auto mask = reg::sample_dim_mask_random(256, 0.1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(reg::apply_dim_mask(h, mask, reg::Mode::train));
}
BENCHMARK(BM_ApplyDimMask);

Batch copy_batch(std::size_t size, std::size_t len, Rng& rng) {
  std::vector<std::vector<int>> src(size), tgt(size);
  for (std::size_t b = 0; b < size; ++b) {
    for (std::size_t t = 0; t < len; ++t) src[b].push_back(4 + static_cast<int>(rng.uniform_int(28)));
    tgt[b] = src[b];
    tgt[b].push_back(kEosId);
  }
  return make_token_batch(src, tgt, {});
}

// One forward + backward of the loss; arg 1 toggles the span regularizer.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::toy();
  if (state.range(0) != 0) {
    cfg.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
    cfg.residual_regularizer.max_span = 8;
  }
  Transformer model(cfg, 7);
  Rng rng(8);
  const Batch batch = copy_batch(8, 10, rng);
  for (auto _ : state) {
    Tape tape;
    ForwardContext ctx;
    ctx.mode = Mode::train;
    ctx.rng = &rng;
    model.parameters().zero_grad();
    const Var loss = model.loss(tape, batch, ctx);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value()[0]);
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InferenceForward(benchmark::State& state) {
  Transformer model(ModelConfig::toy(), 7);
  Rng rng(9);
  const Batch batch = copy_batch(8, 10, rng);
  for (auto _ : state) {
    Tape tape;
    ForwardContext ctx;
    benchmark::DoNotOptimize(model.forward(tape, batch, ctx).value()[0]);
  }
}
BENCHMARK(BM_InferenceForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
