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
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dropdim/rng.hpp"
#include "dropdim/structured_dropout.hpp"
#include "dropdim/tape.hpp"
#include "dropdim/tensor.hpp"

namespace dropdim::model {

using reg::Mode;

struct ModelConfig {
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t embed_dim = 64;
  std::size_t ffn_dim = 256;
  std::size_t src_vocab = 32;
  std::size_t tgt_vocab = 32;
  // Non-zero: the source is a [T,F] frame sequence fed through the
  // continuous front end instead of token embeddings.
  std::size_t feature_dim = 0;
  double attention_dropout = 0.0;
  reg::RegularizerSpec residual_regularizer;
  double label_smoothing = 0.1;
  std::size_t max_seq_len = 64;
  bool share_embeddings = false;
  double layernorm_eps = 1e-5;

  // Desk-scale defaults: 2+2 layers, H=4, D=64, FFN 256.
  static ModelConfig toy();
  // 6+6 layers, H=4, D=256, FFN 2048; shape tests only.
  static ModelConfig paper_shape();

  // Throws ConfigError naming the first offending field.
  void validate() const;

  // Canonical "key=value" lines in a fixed key order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  // Applies one "model.*" / "reg.*" key; returns false for unknown keys.
  bool set(std::string_view key, std::string_view value);
  // Ordered key=value pairs mirroring to_text().
  std::vector<std::pair<std::string, std::string>> fields() const;
};

enum class BlockKind { self_attention, cross_attention, feed_forward };

struct SubBlock {
  BlockKind kind = BlockKind::self_attention;
  reg::Part part = reg::Part::encoder;
  std::size_t layer = 0;

  // "enc.0.self_attn", "dec.1.cross_attn", "dec.1.ffn"
  std::string location() const;
};

// Teacher-forced mini-batch. Token sources are padded to src_len; frame
// sources carry [B,S,F] features. Targets end with EOS; tgt_in is the
// BOS-shifted copy.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::vector<int> src;
  Tensor frames;
  std::vector<std::size_t> src_lengths;
  std::size_t tgt_len = 0;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
  std::vector<std::uint64_t> example_ids;
};

Batch make_token_batch(std::span<const std::vector<int>> sources,
                       std::span<const std::vector<int>> targets,
                       std::span<const std::uint64_t> example_ids);
// frames[b] is [T_b, F].
Batch make_frame_batch(std::span<const Tensor> frames, std::span<const std::vector<int>> targets,
                       std::span<const std::uint64_t> example_ids);

// Per-sub-block tensors recorded during a forward pass.
struct ActivationProbe {
  struct Entry {
    SubBlock block;
    Tensor input;   // x
    Tensor sum;     // x + sub_block(x)
    Tensor output;  // regularized sum
  };
  std::vector<Entry> entries;
  Tensor memory;  // final encoder output
};

// Attention weights of the last encoder self-attention and last decoder
// cross-attention, [B*H, rows, cols].
struct AttentionCapture {
  Tensor encoder_self;
  Tensor cross;
};

struct ForwardContext {
  Mode mode = Mode::inference;
  Rng* rng = nullptr;
  reg::MaskTrace* trace = nullptr;
  std::uint64_t step = 0;
  // Replace every sampled DimMask by a full-keep mask.
  bool force_full_keep = false;
  // Regularizer to use instead of the model's configured one.
  const reg::RegularizerSpec* spec_override = nullptr;
  ActivationProbe* probe = nullptr;
  AttentionCapture* attention = nullptr;
  std::span<const std::uint64_t> example_ids;
};

// y = x + body(x), then the residual regularizer on y when the block's part
// is selected and the context is in train mode.
Var residual_sub_block(Var x, const SubBlock& block, const std::function<Var(Var)>& body,
                       const reg::RegularizerSpec& spec, ForwardContext& ctx);

struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

struct AttentionOptions {
  std::size_t heads = 1;
  // [B*H, Tq, Tk] additive mask (0 or a large negative value); may be null.
  const Tensor* additive_mask = nullptr;
  // Attention-level regularizer, applied only in train mode.
  reg::AttentionKind kind = reg::AttentionKind::none;
  double rate = 0.0;
  double attention_dropout = 0.0;
  Tensor* capture = nullptr;
};

// Scaled dot-product attention over H heads. Inputs are [B,T,D].
Var multi_head_attention(Var query, Var key, Var value, const AttentionWeights& weights,
                         const AttentionOptions& options, ForwardContext& ctx);

// sin/cos positional table [steps, dim].
Tensor sinusoidal_positions(std::size_t steps, std::size_t dim);

// Ordered named parameters.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor value);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Transformer {
 public:
  Transformer(ModelConfig config, std::uint64_t init_seed);
  // Adopts loaded parameters; names and shapes must match the config.
  Transformer(ModelConfig config, ParameterStore parameters);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  // Teacher-forced logits [B, T_tgt, V].
  Var forward(Tape& tape, const Batch& batch, ForwardContext& ctx);
  // Label-smoothed cross entropy of forward().
  Var loss(Tape& tape, const Batch& batch, ForwardContext& ctx);

  // Encoder output [B, S', D].
  Var encode(Tape& tape, const Batch& batch, ForwardContext& ctx);
  // Decoder logits for ids laid out [B, steps] against an encoded memory.
  Var decode(Tape& tape, Var memory, const Batch& batch, std::span<const int> tgt_in,
             std::size_t steps, ForwardContext& ctx);

  // Linear projection, stride-2 time subsampling, sinusoidal positions.
  Var continuous_frontend(Tape& tape, Var features);

  // Inner function of one sub-block (layernorm then attention or FFN),
  // excluding the residual add and regularizer. memory is only read by
  // cross-attention blocks.
  Var sub_block_body(Tape& tape, const SubBlock& block, Var x, const Batch& batch, Var memory,
                     ForwardContext& ctx);

  // Source length after the front end.
  std::size_t encoded_length(std::size_t src_len) const;

 private:
  void init_parameters(std::uint64_t seed);
  Var param(Tape& tape, std::string_view name);
  AttentionWeights attention_weights(Tape& tape, const std::string& prefix);
  const reg::RegularizerSpec& spec(const ForwardContext& ctx) const;
  Tensor self_mask(const Batch& batch, bool causal, std::size_t steps) const;
  Tensor cross_mask(const Batch& batch, std::size_t steps) const;

  ModelConfig config_;
  ParameterStore params_;
};

// Argmax decoding in inference mode until EOS or max_len tokens. Returned
// sequences exclude EOS.
std::vector<std::vector<int>> greedy_decode(Transformer& model, const Batch& batch,
                                            std::size_t max_len);

}  // namespace dropdim::model
