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
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "../support/gradcheck.hpp"
#include "../support/model_gradcheck.hpp"
#include "dropdim/checkpoint.hpp"
#include "dropdim/errors.hpp"
#include "dropdim/regularizer_ops.hpp"
#include "dropdim/transformer.hpp"
#include "dropdim/vocab.hpp"

namespace dropdim::model {
namespace {

using testing::random_tensor;

ModelConfig tiny_config() {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.embed_dim = 8;
  c.ffn_dim = 16;
  c.src_vocab = 10;
  c.tgt_vocab = 10;
  c.max_seq_len = 16;
  return c;
}

Batch tiny_batch() {
  const std::vector<std::vector<int>> src{{4, 5, 6}, {7, 8}};
  const std::vector<std::vector<int>> tgt{{6, 5, 4, kEosId}, {8, 7, kEosId}};
  return make_token_batch(src, tgt, {});
}

Tensor identity(std::size_t d) {
  Tensor t(Shape{d, d});
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

AttentionWeights constant_weights(Tape& tape, const Tensor& w, std::size_t d) {
  const Var m = tape.constant(w);
  const Var b = tape.constant(Tensor::zeros(Shape{d}));
  return {m, b, m, b, m, b, m, b};
}

reg::DimMask replay(const reg::MaskRecord& r, std::size_t dim) {
  std::vector<bool> keep(dim, true);
  for (auto j : r.dropped) keep[j] = false;
  reg::DimMask m = reg::DimMask::from_keep(std::move(keep));
  m.norm_factor = r.norm_factor;
  return m;
}

Tensor logits_of(Transformer& model, const Batch& batch, ForwardContext& ctx) {
  Tape tape;
  tape.set_grad_enabled(false);
  return model.forward(tape, batch, ctx).value();
}

TEST(Attention, SinglePositionReturnsValue) {
  Tape tape;
  const Var v = tape.constant(Tensor(Shape{1, 1, 4}, {0.3, -1.2, 2.0, 0.5}));
  ForwardContext ctx;
  AttentionOptions opts;
  const Var out = multi_head_attention(v, v, v, constant_weights(tape, identity(4), 4), opts, ctx);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.value()[i], v.value()[i], 1e-15);
}

TEST(Attention, UniformKeysAverageValues) {
  Tape tape;
  Rng rng(1);
  const Var q = tape.constant(random_tensor(Shape{1, 2, 4}, rng));
  const Var k = tape.constant(Tensor::filled(Shape{1, 3, 4}, 0.7));
  const Tensor values = random_tensor(Shape{1, 3, 4}, rng);
  ForwardContext ctx;
  AttentionOptions opts;
  opts.heads = 2;
  const Var out = multi_head_attention(q, k, tape.constant(values),
                                       constant_weights(tape, identity(4), 4), opts, ctx);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < 4; ++j) {
      const double mean = (values[j] + values[4 + j] + values[8 + j]) / 3.0;
      EXPECT_NEAR(out.value()[t * 4 + j], mean, 1e-12);
    }
}

TEST(Attention, HeadsMustDivideDim) {
  Tape tape;
  const Var x = tape.constant(Tensor(Shape{1, 2, 8}));
  ForwardContext ctx;
  AttentionOptions opts;
  opts.heads = 3;
  EXPECT_THROW(multi_head_attention(x, x, x, constant_weights(tape, identity(8), 8), opts, ctx),
               ConfigError);
  ModelConfig c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Attention, GradientCheck) {
  Rng rng(2);
  std::vector<Tensor> inputs{random_tensor(Shape{2, 3, 8}, rng)};
  for (int i = 0; i < 4; ++i) {
    inputs.push_back(random_tensor(Shape{8, 8}, rng, 0.4));
    inputs.push_back(random_tensor(Shape{8}, rng, 0.1));
  }
  // Causal mask on the 3x3 scores, broadcast over [B*H].
  Tensor mask(Shape{4, 3, 3});
  for (std::size_t bh = 0; bh < 4; ++bh)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = i + 1; j < 3; ++j) mask.values()[bh * 9 + i * 3 + j] = -1e9;
  const auto r = testing::check_gradients(
      [&](Tape&, const std::vector<Var>& v) {
        const AttentionWeights w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
        ForwardContext ctx;
        AttentionOptions opts;
        opts.heads = 2;
        opts.additive_mask = &mask;
        return testing::project(multi_head_attention(v[0], v[0], v[0], w, opts, ctx));
      },
      inputs);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

SubBlock block(reg::Part part, BlockKind kind = BlockKind::feed_forward) {
  SubBlock b;
  b.part = part;
  b.kind = kind;
  return b;
}

TEST(ResidualSubBlock, NoneReturnsSum) {
  Rng rng(3);
  Tape tape;
  const Var x = tape.constant(random_tensor(Shape{2, 3, 4}, rng));
  const auto body = [](Var in) { return scale(in, 2.0); };
  ForwardContext ctx;
  ctx.mode = Mode::train;
  ctx.rng = &rng;
  const Var y = residual_sub_block(x, block(reg::Part::encoder), body, reg::RegularizerSpec{}, ctx);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(y.value()[i], x.value()[i] + 2.0 * x.value()[i]);
}

TEST(ResidualSubBlock, PartGatingSkipsOtherPart) {
  Rng rng(4);
  Tape tape;
  const Var x = tape.constant(random_tensor(Shape{2, 3, 4}, rng));
  reg::RegularizerSpec spec;
  spec.kind = reg::ResidualKind::dropdim_random;
  spec.rate = 0.5;
  spec.part = reg::Part::encoder;
  reg::MaskTrace trace;
  ForwardContext ctx;
  ctx.mode = Mode::train;
  ctx.rng = &rng;
  ctx.trace = &trace;
  const Var y = residual_sub_block(x, block(reg::Part::decoder), [](Var in) { return in; }, spec, ctx);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(y.value()[i], 2.0 * x.value()[i]);
  EXPECT_TRUE(trace.records().empty());
}

TEST(ResidualSubBlock, DroppedColumnsZeroAcrossTime) {
  Rng rng(5);
  Tape tape;
  const Var x = tape.constant(random_tensor(Shape{3, 5, 16}, rng));
  reg::RegularizerSpec spec;
  spec.kind = reg::ResidualKind::dropdim_random;
  spec.rate = 0.1;
  reg::MaskTrace trace;
  ForwardContext ctx;
  ctx.mode = Mode::train;
  ctx.rng = &rng;
  ctx.trace = &trace;
  const Var y = residual_sub_block(x, block(reg::Part::encoder), [](Var in) { return in; }, spec, ctx);
  ASSERT_EQ(trace.records().size(), 3u);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& rec = trace.records()[b];
    EXPECT_EQ(rec.example_id, b);
    for (std::size_t j : rec.dropped)
      for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(y.value()[(b * 5 + t) * 16 + j], 0.0);
  }
}

TEST(Transformer, InferenceDeterministicAndShapes) {
  Transformer model(tiny_config(), 11);
  const Batch batch = tiny_batch();
  ForwardContext ctx;
  const Tensor a = logits_of(model, batch, ctx);
  const Tensor b = logits_of(model, batch, ctx);
  EXPECT_EQ(a.storage(), b.storage());
  EXPECT_EQ(a.shape(), (Shape{2, 4, 10}));

  const std::vector<std::vector<int>> src{{4}}, tgt{{kEosId}};
  const Batch one = make_token_batch(src, tgt, {});
  EXPECT_EQ(logits_of(model, one, ctx).shape(), (Shape{1, 1, 10}));
}

TEST(Transformer, OutOfVocabularyIsIndexError) {
  Transformer model(tiny_config(), 11);
  const std::vector<std::vector<int>> src{{4, 10}}, tgt{{5, kEosId}};
  const Batch bad = make_token_batch(src, tgt, {});
  ForwardContext ctx;
  EXPECT_THROW(logits_of(model, bad, ctx), IndexError);
}

TEST(Transformer, InitialLossNearUniformExpectation) {
  Rng rng(13);
  std::vector<std::vector<int>> src, tgt;
  for (int i = 0; i < 8; ++i) {
    std::vector<int> s;
    for (int t = 0; t < 6; ++t) s.push_back(4 + static_cast<int>(rng.uniform_int(28)));
    src.push_back(s);
    s.push_back(kEosId);
    tgt.push_back(s);
  }
  const Batch batch = make_token_batch(src, tgt, {});
  const double v = 32.0;
  for (double eps : {0.0, 0.1}) {
    ModelConfig c = ModelConfig::toy();
    c.tgt_vocab = c.src_vocab = 32;
    c.label_smoothing = eps;
    Transformer model(c, 12);
    ForwardContext ctx;
    Tape tape;
    const double loss = model.loss(tape, batch, ctx).value()[0];
    // KL(q || uniform) = ln V - H(q); ln V itself when eps = 0.
    double entropy = 0.0;
    if (eps > 0.0) {
      const double off = eps / (v - 1.0);
      entropy = -(1.0 - eps) * std::log(1.0 - eps) - (v - 1.0) * off * std::log(off);
    }
    const double expected = std::log(v) - entropy;
    EXPECT_NEAR(loss, expected, 0.1 * expected) << "eps=" << eps;
  }
}

TEST(Transformer, InferenceIgnoresSeedForEveryRegularizer) {
  const Batch batch = tiny_batch();
  for (auto kind : {reg::ResidualKind::dropout, reg::ResidualKind::dropdim_random,
                    reg::ResidualKind::dropdim_span}) {
    ModelConfig c = tiny_config();
    c.residual_regularizer.kind = kind;
    c.residual_regularizer.rate = 0.3;
    c.residual_regularizer.max_span = 3;
    c.residual_regularizer.attention_kind = reg::AttentionKind::drophead;
    c.residual_regularizer.attention_rate = 0.5;
    Transformer model(c, 14);
    Rng r1(1), r2(2);
    ForwardContext c1, c2;
    c1.rng = &r1;
    c2.rng = &r2;
    EXPECT_EQ(logits_of(model, batch, c1).storage(), logits_of(model, batch, c2).storage());
  }
}

TEST(Transformer, TracedMasksReproduceActivations) {
  ModelConfig c = tiny_config();
  c.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
  c.residual_regularizer.max_span = 4;
  Transformer model(c, 15);
  const Batch batch = tiny_batch();
  Rng rng(16);
  reg::MaskTrace trace;
  ActivationProbe probe;
  ForwardContext ctx;
  ctx.mode = Mode::train;
  ctx.rng = &rng;
  ctx.trace = &trace;
  ctx.probe = &probe;
  logits_of(model, batch, ctx);
  ASSERT_EQ(probe.entries.size(), 5u);  // 2 encoder + 3 decoder sub-blocks
  ASSERT_EQ(trace.records().size(), 5u * batch.size);

  std::size_t rec = 0;
  for (const auto& e : probe.entries) {
    // Recompute x + sub_block(x) independently in inference mode.
    Tape tape;
    tape.set_grad_enabled(false);
    ForwardContext plain;
    const Var x = tape.constant(e.input);
    const Var y = add(x, model.sub_block_body(tape, e.block, x, batch, tape.constant(probe.memory),
                                              plain));
    EXPECT_EQ(y.value().storage(), e.sum.storage());
    std::vector<reg::DimMask> masks;
    for (std::size_t b = 0; b < batch.size; ++b, ++rec) {
      const auto& r = trace.records()[rec];
      EXPECT_EQ(r.location, e.block.location());
      masks.push_back(replay(r, c.embed_dim));
    }
    EXPECT_EQ(reg::dim_mask(y, masks).value().storage(), e.output.storage());
  }
}

TEST(Transformer, EncoderOnlyGatingLeavesDecoderUnchanged) {
  ModelConfig c = tiny_config();
  Transformer model(c, 17);
  const Batch batch = tiny_batch();
  reg::RegularizerSpec none;
  reg::RegularizerSpec enc;
  enc.kind = reg::ResidualKind::dropdim_random;
  enc.rate = 0.4;
  enc.part = reg::Part::encoder;
  Rng r1(1), r2(1);
  ForwardContext a, b;
  a.mode = b.mode = Mode::train;
  a.force_full_keep = b.force_full_keep = true;
  a.rng = &r1;
  b.rng = &r2;
  a.spec_override = &none;
  b.spec_override = &enc;
  ActivationProbe pa, pb;
  a.probe = &pa;
  b.probe = &pb;
  EXPECT_EQ(logits_of(model, batch, a).storage(), logits_of(model, batch, b).storage());
  ASSERT_EQ(pa.entries.size(), pb.entries.size());
  for (std::size_t i = 0; i < pa.entries.size(); ++i) {
    if (pa.entries[i].block.part == reg::Part::decoder) {
      EXPECT_EQ(pa.entries[i].output.storage(), pb.entries[i].output.storage());
    }
  }
}

TEST(Transformer, GreedyDecodeEdgeCases) {
  ModelConfig c = tiny_config();
  c.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  c.residual_regularizer.rate = 0.3;
  Transformer model(c, 18);
  const Batch batch = tiny_batch();
  const auto empty = greedy_decode(model, batch, 0);
  ASSERT_EQ(empty.size(), 2u);
  EXPECT_TRUE(empty[0].empty() && empty[1].empty());
  const auto a = greedy_decode(model, batch, 6);
  EXPECT_EQ(a, greedy_decode(model, batch, 6));
  for (const auto& seq : a) EXPECT_LE(seq.size(), 6u);
}

TEST(Frontend, StrideAndBias) {
  ModelConfig c = tiny_config();
  c.feature_dim = 8;
  Transformer model(c, 19);
  for (std::size_t t : {4u, 5u, 1u}) {
    Tape tape;
    const Var out = model.continuous_frontend(tape, tape.constant(Tensor(Shape{1, t, 8})));
    EXPECT_EQ(out.shape(), (Shape{1, (t + 1) / 2, 8}));
  }
  Tensor& bias = model.parameters().get("frontend.b");
  for (std::size_t i = 0; i < 8; ++i) bias.values()[i] = 0.1 * static_cast<double>(i + 1);
  Tape tape;
  const Var out = model.continuous_frontend(tape, tape.constant(Tensor(Shape{1, 4, 8})));
  const Tensor pe = sinusoidal_positions(2, 8);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 8; ++i)
      EXPECT_DOUBLE_EQ(out.value()[t * 8 + i], bias[i] + pe.at(t, i));
  EXPECT_THROW(model.continuous_frontend(tape, tape.constant(Tensor(Shape{1, 4, 7}))),
               DimensionError);
}

TEST(Frontend, GradientCheck) {
  ModelConfig c = tiny_config();
  c.feature_dim = 8;
  Transformer model(c, 20);
  Rng rng(21);
  const auto r = testing::check_gradients(
      [&](Tape& tape, const std::vector<Var>& v) {
        return testing::project(model.continuous_frontend(tape, v[0]));
      },
      {random_tensor(Shape{1, 4, 8}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Transformer, EndToEndGradientCheck) {
  for (auto kind : {reg::ResidualKind::dropdim_random, reg::ResidualKind::dropdim_span,
                    reg::ResidualKind::dropout}) {
    ModelConfig c = tiny_config();
    c.residual_regularizer.kind = kind;
    c.residual_regularizer.rate = 0.2;
    c.residual_regularizer.max_span = 3;
    Transformer model(c, 22);
    EXPECT_LT(testing::model_gradcheck(model, tiny_batch(), 10, 23).max_rel_error, 1e-3) << reg::to_string(kind);
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  ModelConfig c = tiny_config();
  c.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
  c.residual_regularizer.max_span = 3;
  const Transformer model(c, 24);
  std::stringstream first;
  save_checkpoint(model, first);
  EXPECT_EQ(first.str().substr(0, 5), "DDIM1");
  const Transformer loaded = load_checkpoint(first);
  EXPECT_EQ(loaded.config().to_text(), c.to_text());
  ASSERT_EQ(loaded.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& [na, ta] = model.parameters().entries()[i];
    const auto& [nb, tb] = loaded.parameters().entries()[i];
    EXPECT_EQ(na, nb);
    EXPECT_EQ(ta.shape(), tb.shape());
    EXPECT_EQ(ta.storage(), tb.storage());
  }
  std::stringstream second;
  save_checkpoint(loaded, second);
  EXPECT_EQ(first.str(), second.str());
}

TEST(Checkpoint, RejectsBadMagic) {
  std::stringstream junk("NOPE1 whatever");
  EXPECT_THROW(load_checkpoint(junk), FormatError);
}

TEST(ModelConfig, TextRoundTripAndPresets) {
  ModelConfig c = tiny_config();
  c.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  c.residual_regularizer.rate = 0.05;
  c.label_smoothing = 0.0;
  EXPECT_EQ(ModelConfig::from_text(c.to_text()).to_text(), c.to_text());
  EXPECT_THROW(ModelConfig::from_text("model.bogus=1\n"), ConfigError);

  const ModelConfig p = ModelConfig::paper_shape();
  EXPECT_EQ(p.embed_dim, 256u);
  EXPECT_EQ(p.heads, 4u);
  EXPECT_EQ(p.ffn_dim, 2048u);
  const ModelConfig t = ModelConfig::toy();
  EXPECT_EQ(t.embed_dim, 64u);
  EXPECT_EQ(t.heads, 4u);
  EXPECT_EQ(t.ffn_dim, 256u);
  EXPECT_EQ(t.enc_layers + t.dec_layers, 4u);
}

TEST(ModelConfig, PaperShapeForward) {
  ModelConfig p = ModelConfig::paper_shape();
  p.src_vocab = p.tgt_vocab = 12;
  Transformer model(p, 25);
  const Batch batch = tiny_batch();
  ForwardContext ctx;
  EXPECT_EQ(logits_of(model, batch, ctx).shape(), (Shape{2, 4, 12}));
}

}  // namespace
}  // namespace dropdim::model
