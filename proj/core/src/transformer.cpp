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
#include "dropdim/transformer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "dropdim/errors.hpp"
#include "dropdim/ops.hpp"
#include "dropdim/regularizer_ops.hpp"
#include "dropdim/vocab.hpp"
#include "parse_util.hpp"

namespace dropdim::model {
namespace {

using detail::fmt;
using detail::parse_bool;
using detail::parse_real;
using detail::parse_size;

constexpr double kMaskedScore = -1e9;

std::string layer_prefix(reg::Part part, std::size_t layer) {
  return (part == reg::Part::decoder ? "dec." : "enc.") + std::to_string(layer) + ".";
}

Tensor tiled_positions(std::size_t batch, std::size_t steps, std::size_t dim) {
  const Tensor pe = sinusoidal_positions(steps, dim);
  Tensor out(Shape{batch, steps, dim});
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(pe.storage().begin(), pe.storage().end(),
              ov.begin() + static_cast<std::ptrdiff_t>(b * steps * dim));
  }
  return out;
}

}  // namespace

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_shape() {
  ModelConfig c;
  c.enc_layers = 6;
  c.dec_layers = 6;
  c.heads = 4;
  c.embed_dim = 256;
  c.ffn_dim = 2048;
  c.attention_dropout = 0.0;
  c.residual_regularizer.kind = reg::ResidualKind::dropout;
  c.residual_regularizer.rate = 0.1;
  c.label_smoothing = 0.1;
  c.max_seq_len = 512;
  return c;
}

void ModelConfig::validate() const {
  const auto positive = [](const char* field, std::size_t v) {
    if (v == 0) throw ConfigError(std::string(field) + " must be >= 1");
  };
  positive("model.enc_layers", enc_layers);
  positive("model.dec_layers", dec_layers);
  positive("model.heads", heads);
  positive("model.embed_dim", embed_dim);
  positive("model.ffn_dim", ffn_dim);
  positive("model.max_seq_len", max_seq_len);
  if (embed_dim % heads != 0) {
    throw ConfigError("model.embed_dim: " + std::to_string(embed_dim) +
                      " is not divisible by model.heads=" + std::to_string(heads));
  }
  if (src_vocab < static_cast<std::size_t>(kNumReservedTokens) && feature_dim == 0) {
    throw ConfigError("model.src_vocab must be >= 4 (pad, bos, eos, unk are reserved)");
  }
  if (tgt_vocab < static_cast<std::size_t>(kNumReservedTokens)) {
    throw ConfigError("model.tgt_vocab must be >= 4 (pad, bos, eos, unk are reserved)");
  }
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) {
    throw ConfigError("model.attention_dropout must lie in [0,1)");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("model.label_smoothing must lie in [0,1)");
  }
  if (!(layernorm_eps >= 0.0)) throw ConfigError("model.layernorm_eps must be >= 0");
  if (share_embeddings && (feature_dim != 0 || src_vocab != tgt_vocab)) {
    throw ConfigError("model.share_embeddings needs token sources with src_vocab == tgt_vocab");
  }
  try {
    residual_regularizer.validate(embed_dim);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("reg: ") + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> ModelConfig::fields() const {
  const auto& r = residual_regularizer;
  return {
      {"model.enc_layers", std::to_string(enc_layers)},
      {"model.dec_layers", std::to_string(dec_layers)},
      {"model.heads", std::to_string(heads)},
      {"model.embed_dim", std::to_string(embed_dim)},
      {"model.ffn_dim", std::to_string(ffn_dim)},
      {"model.src_vocab", std::to_string(src_vocab)},
      {"model.tgt_vocab", std::to_string(tgt_vocab)},
      {"model.feature_dim", std::to_string(feature_dim)},
      {"model.attention_dropout", fmt(attention_dropout)},
      {"model.label_smoothing", fmt(label_smoothing)},
      {"model.max_seq_len", std::to_string(max_seq_len)},
      {"model.share_embeddings", share_embeddings ? "true" : "false"},
      {"model.layernorm_eps", fmt(layernorm_eps)},
      {"reg.kind", std::string(reg::to_string(r.kind))},
      {"reg.p", fmt(r.rate)},
      {"reg.alpha", std::to_string(r.max_span)},
      {"reg.part", std::string(reg::to_string(r.part))},
      {"reg.attn_kind", std::string(reg::to_string(r.attention_kind))},
      {"reg.attn_rate", fmt(r.attention_rate)},
      {"reg.bernoulli", std::string(reg::to_string(r.reading))},
  };
}

std::string ModelConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : fields()) out += k + "=" + v + "\n";
  return out;
}

bool ModelConfig::set(std::string_view key, std::string_view value) {
  auto& r = residual_regularizer;
  if (key == "model.enc_layers") enc_layers = parse_size(key, value);
  else if (key == "model.dec_layers") dec_layers = parse_size(key, value);
  else if (key == "model.heads") heads = parse_size(key, value);
  else if (key == "model.embed_dim") embed_dim = parse_size(key, value);
  else if (key == "model.ffn_dim") ffn_dim = parse_size(key, value);
  else if (key == "model.src_vocab") src_vocab = parse_size(key, value);
  else if (key == "model.tgt_vocab") tgt_vocab = parse_size(key, value);
  else if (key == "model.feature_dim") feature_dim = parse_size(key, value);
  else if (key == "model.attention_dropout") attention_dropout = parse_real(key, value);
  else if (key == "model.label_smoothing") label_smoothing = parse_real(key, value);
  else if (key == "model.max_seq_len") max_seq_len = parse_size(key, value);
  else if (key == "model.share_embeddings") share_embeddings = parse_bool(key, value);
  else if (key == "model.layernorm_eps") layernorm_eps = parse_real(key, value);
  else if (key == "reg.kind") r.kind = reg::parse_residual_kind(value);
  else if (key == "reg.p") r.rate = parse_real(key, value);
  else if (key == "reg.alpha") r.max_span = parse_size(key, value);
  else if (key == "reg.part") r.part = reg::parse_part(value);
  else if (key == "reg.attn_kind") r.attention_kind = reg::parse_attention_kind(value);
  else if (key == "reg.attn_rate") r.attention_rate = parse_real(key, value);
  else if (key == "reg.bernoulli") r.reading = reg::parse_bernoulli_reading(value);
  else return false;
  return true;
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
    const std::string key = line.substr(0, eq);
    if (!c.set(key, std::string_view(line).substr(eq + 1))) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return c;
}

std::string SubBlock::location() const {
  std::string s = layer_prefix(part, layer);
  switch (kind) {
    case BlockKind::self_attention: return s + "self_attn";
    case BlockKind::cross_attention: return s + "cross_attn";
    case BlockKind::feed_forward: return s + "ffn";
  }
  return s;
}

namespace {

void fill_targets(Batch& batch, std::span<const std::vector<int>> targets) {
  std::size_t tgt_len = 0;
  for (const auto& t : targets) {
    if (t.empty()) throw DimensionError("empty target sequence");
    tgt_len = std::max(tgt_len, t.size());
  }
  batch.tgt_len = tgt_len;
  batch.tgt_in.assign(batch.size * tgt_len, kPadId);
  batch.tgt_out.assign(batch.size * tgt_len, kPadId);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto& t = targets[b];
    batch.tgt_in[b * tgt_len] = kBosId;
    for (std::size_t i = 0; i < t.size(); ++i) {
      batch.tgt_out[b * tgt_len + i] = t[i];
      if (i + 1 < t.size()) batch.tgt_in[b * tgt_len + i + 1] = t[i];
    }
  }
}

void fill_ids(Batch& batch, std::span<const std::uint64_t> example_ids) {
  if (example_ids.empty()) {
    for (std::size_t b = 0; b < batch.size; ++b) batch.example_ids.push_back(b);
  } else if (example_ids.size() != batch.size) {
    throw DimensionError("batch: " + std::to_string(example_ids.size()) + " example ids for " +
                         std::to_string(batch.size) + " examples");
  } else {
    batch.example_ids.assign(example_ids.begin(), example_ids.end());
  }
}

}  // namespace

Batch make_token_batch(std::span<const std::vector<int>> sources,
                       std::span<const std::vector<int>> targets,
                       std::span<const std::uint64_t> example_ids) {
  if (sources.size() != targets.size() || sources.empty()) {
    throw DimensionError("batch: " + std::to_string(sources.size()) + " sources for " +
                         std::to_string(targets.size()) + " targets");
  }
  Batch batch;
  batch.size = sources.size();
  for (const auto& s : sources) {
    if (s.empty()) throw DimensionError("empty source sequence");
    batch.src_len = std::max(batch.src_len, s.size());
  }
  batch.src.assign(batch.size * batch.src_len, kPadId);
  for (std::size_t b = 0; b < batch.size; ++b) {
    std::copy(sources[b].begin(), sources[b].end(),
              batch.src.begin() + static_cast<std::ptrdiff_t>(b * batch.src_len));
    batch.src_lengths.push_back(sources[b].size());
  }
  fill_targets(batch, targets);
  fill_ids(batch, example_ids);
  return batch;
}

Batch make_frame_batch(std::span<const Tensor> frames, std::span<const std::vector<int>> targets,
                       std::span<const std::uint64_t> example_ids) {
  if (frames.size() != targets.size() || frames.empty()) {
    throw DimensionError("batch: " + std::to_string(frames.size()) + " frame sequences for " +
                         std::to_string(targets.size()) + " targets");
  }
  Batch batch;
  batch.size = frames.size();
  const std::size_t feat = frames[0].shape().back();
  for (const auto& f : frames) {
    if (f.rank() != 2 || f.dim(1) != feat || f.dim(0) == 0) {
      throw DimensionError("frame sequence " + f.shape().str() + " does not match [T," +
                           std::to_string(feat) + "]");
    }
    batch.src_len = std::max(batch.src_len, f.dim(0));
  }
  batch.frames = Tensor(Shape{batch.size, batch.src_len, feat});
  auto fv = batch.frames.values();
  for (std::size_t b = 0; b < batch.size; ++b) {
    std::copy(frames[b].storage().begin(), frames[b].storage().end(),
              fv.begin() + static_cast<std::ptrdiff_t>(b * batch.src_len * feat));
    batch.src_lengths.push_back(frames[b].dim(0));
  }
  fill_targets(batch, targets);
  fill_ids(batch, example_ids);
  return batch;
}

Var residual_sub_block(Var x, const SubBlock& block, const std::function<Var(Var)>& body,
                       const reg::RegularizerSpec& spec, ForwardContext& ctx) {
  const Var y = add(x, body(x));
  Var out = y;
  const bool active = ctx.mode == Mode::train && spec.kind != reg::ResidualKind::none &&
                      spec.applies_to(block.part);
  if (active) {
    const bool dimwise = spec.kind == reg::ResidualKind::dropdim_random ||
                         spec.kind == reg::ResidualKind::dropdim_span;
    if (ctx.rng == nullptr && !(dimwise && ctx.force_full_keep)) {
      throw std::logic_error("train-mode regularizer needs an rng");
    }
    if (spec.kind == reg::ResidualKind::dropout) {
      out = reg::dropout(y, spec.rate, *ctx.rng);
    } else {
      const std::size_t batch = y.shape()[0];
      const std::size_t dim = y.shape()[2];
      std::vector<reg::DimMask> masks;
      masks.reserve(batch);
      const std::string location = block.location();
      const reg::RandomMaskOptions options{spec.reading};
      for (std::size_t b = 0; b < batch; ++b) {
        reg::DimMask m;
        if (ctx.force_full_keep) {
          m = reg::DimMask::full_keep(dim);
          m.variant = spec.kind == reg::ResidualKind::dropdim_span ? reg::MaskVariant::span
                                                                   : reg::MaskVariant::random;
        } else if (spec.kind == reg::ResidualKind::dropdim_random) {
          m = reg::sample_dim_mask_random(dim, spec.rate, *ctx.rng, options);
        } else {
          m = reg::sample_dim_mask_span(dim, spec.max_span, *ctx.rng);
        }
        if (ctx.trace != nullptr) {
          const std::uint64_t id = b < ctx.example_ids.size() ? ctx.example_ids[b] : b;
          ctx.trace->append(ctx.step, id, location, m);
        }
        masks.push_back(std::move(m));
      }
      out = reg::dim_mask(y, masks);
    }
  }
  if (ctx.probe != nullptr) {
    ctx.probe->entries.push_back({block, x.value(), y.value(), out.value()});
  }
  return out;
}

Var multi_head_attention(Var query, Var key, Var value, const AttentionWeights& w,
                         const AttentionOptions& options, ForwardContext& ctx) {
  const std::size_t dim = query.shape().back();
  const std::size_t heads = options.heads;
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: embedding size " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  Tape& tape = query.tape();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dim / heads));
  const Var q = split_heads(add_bias(matmul(query, w.wq), w.bq), heads);
  const Var k = split_heads(add_bias(matmul(key, w.wk), w.bk), heads);
  const Var v = split_heads(add_bias(matmul(value, w.wv), w.bv), heads);
  Var scores = scale(matmul(q, transpose(k)), inv_sqrt);
  if (options.additive_mask != nullptr) {
    scores = add(scores, tape.constant(*options.additive_mask));
  }
  Var attn = softmax_rows(scores);
  const bool train = ctx.mode == Mode::train;
  if (train && options.attention_dropout > 0.0) {
    attn = reg::dropout(attn, options.attention_dropout, *ctx.rng);
  }
  if (train && options.kind == reg::AttentionKind::dropattention) {
    attn = reg::dropattention(attn, options.rate, *ctx.rng);
  }
  if (options.capture != nullptr) *options.capture = attn.value();
  Var context = matmul(attn, v);
  if (train && options.kind == reg::AttentionKind::drophead) {
    context = reg::drophead(context, heads, options.rate, *ctx.rng);
  }
  return add_bias(matmul(merge_heads(context, heads), w.wo), w.bo);
}

Tensor sinusoidal_positions(std::size_t steps, std::size_t dim) {
  Tensor pe(Shape{steps, dim});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      pe.at(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Tensor& ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

Tensor& ParameterStore::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

bool ParameterStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

Transformer::Transformer(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  init_parameters(init_seed);
}

Transformer::Transformer(ModelConfig config, ParameterStore parameters)
    : config_(std::move(config)) {
  config_.validate();
  init_parameters(0);
  if (parameters.size() != params_.size()) {
    throw FormatError("checkpoint has " + std::to_string(parameters.size()) +
                      " parameters, model expects " + std::to_string(params_.size()));
  }
  for (auto& [name, expected] : params_.entries()) {
    if (!parameters.contains(name)) throw FormatError("checkpoint lacks parameter '" + name + "'");
    Tensor& loaded = parameters.get(name);
    if (loaded.shape() != expected.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + loaded.shape().str() +
                        ", expected " + expected.shape().str());
    }
    expected = Tensor(loaded.shape(), loaded.storage());
    expected.set_requires_grad(true);
  }
}

void Transformer::init_parameters(std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  const std::size_t d = config_.embed_dim;
  const std::size_t f = config_.ffn_dim;
  auto xavier = [&](std::size_t in, std::size_t out) {
    Tensor t(Shape{in, out});
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * a;
    return t;
  };
  auto gaussian = [&](std::size_t rows, std::size_t cols, double stddev) {
    Tensor t(Shape{rows, cols});
    for (double& v : t.values()) v = rng.normal() * stddev;
    return t;
  };
  auto add_layernorm = [&](const std::string& name) {
    params_.add(name + ".g", Tensor::filled(Shape{d}, 1.0));
    params_.add(name + ".b", Tensor::zeros(Shape{d}));
  };
  auto add_attention = [&](const std::string& name) {
    for (const char* m : {"q", "k", "v", "o"}) {
      params_.add(name + ".w" + m, xavier(d, d));
      params_.add(name + ".b" + m, Tensor::zeros(Shape{d}));
    }
  };
  auto add_ffn = [&](const std::string& name) {
    params_.add(name + ".w1", xavier(d, f));
    params_.add(name + ".b1", Tensor::zeros(Shape{f}));
    params_.add(name + ".w2", xavier(f, d));
    params_.add(name + ".b2", Tensor::zeros(Shape{d}));
  };

  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  if (config_.feature_dim > 0) {
    params_.add("frontend.w", xavier(config_.feature_dim, d));
    params_.add("frontend.b", Tensor::zeros(Shape{d}));
  } else if (config_.share_embeddings) {
    params_.add("embed", gaussian(config_.src_vocab, d, embed_std));
  } else {
    params_.add("src_embed", gaussian(config_.src_vocab, d, embed_std));
  }
  if (!config_.share_embeddings) {
    params_.add("tgt_embed", gaussian(config_.tgt_vocab, d, embed_std));
  }
  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    const std::string p = layer_prefix(reg::Part::encoder, l);
    add_layernorm(p + "ln_self");
    add_attention(p + "self");
    add_layernorm(p + "ln_ffn");
    add_ffn(p + "ffn");
  }
  add_layernorm("enc.ln_final");
  for (std::size_t l = 0; l < config_.dec_layers; ++l) {
    const std::string p = layer_prefix(reg::Part::decoder, l);
    add_layernorm(p + "ln_self");
    add_attention(p + "self");
    add_layernorm(p + "ln_cross");
    add_attention(p + "cross");
    add_layernorm(p + "ln_ffn");
    add_ffn(p + "ffn");
  }
  add_layernorm("dec.ln_final");
  // Small output projection keeps initial predictions close to uniform.
  params_.add("out.w", gaussian(d, config_.tgt_vocab, 1.0 / static_cast<double>(d)));
  params_.add("out.b", Tensor::zeros(Shape{config_.tgt_vocab}));
}

Var Transformer::param(Tape& tape, std::string_view name) { return tape.parameter(params_.get(name)); }

AttentionWeights Transformer::attention_weights(Tape& tape, const std::string& prefix) {
  return AttentionWeights{param(tape, prefix + ".wq"), param(tape, prefix + ".bq"),
                          param(tape, prefix + ".wk"), param(tape, prefix + ".bk"),
                          param(tape, prefix + ".wv"), param(tape, prefix + ".bv"),
                          param(tape, prefix + ".wo"), param(tape, prefix + ".bo")};
}

const reg::RegularizerSpec& Transformer::spec(const ForwardContext& ctx) const {
  return ctx.spec_override != nullptr ? *ctx.spec_override : config_.residual_regularizer;
}

std::size_t Transformer::encoded_length(std::size_t src_len) const {
  return config_.feature_dim > 0 ? (src_len + 1) / 2 : src_len;
}

Tensor Transformer::self_mask(const Batch& batch, bool causal, std::size_t steps) const {
  const std::size_t heads = config_.heads;
  Tensor mask(Shape{batch.size * heads, steps, steps});
  for (std::size_t b = 0; b < batch.size; ++b) {
    const std::size_t valid = causal ? steps : encoded_length(batch.src_lengths[b]);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < steps; ++j) {
          const bool blocked = causal ? j > i : j >= valid;
          if (blocked) mask.at(b * heads + h, i, j) = kMaskedScore;
        }
      }
    }
  }
  return mask;
}

Tensor Transformer::cross_mask(const Batch& batch, std::size_t steps) const {
  const std::size_t heads = config_.heads;
  const std::size_t keys = encoded_length(batch.src_len);
  Tensor mask(Shape{batch.size * heads, steps, keys});
  for (std::size_t b = 0; b < batch.size; ++b) {
    const std::size_t valid = encoded_length(batch.src_lengths[b]);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = valid; j < keys; ++j) mask.at(b * heads + h, i, j) = kMaskedScore;
      }
    }
  }
  return mask;
}

Var Transformer::continuous_frontend(Tape& tape, Var features) {
  const Shape& s = features.shape();
  if (s.rank() != 3 || s[2] != config_.feature_dim) {
    throw DimensionError("front end expects [B,T," + std::to_string(config_.feature_dim) +
                         "] features, got " + s.str());
  }
  const Var projected =
      add_bias(matmul(features, param(tape, "frontend.w")), param(tape, "frontend.b"));
  const Var sub = subsample_time(projected, 2);
  const Shape& ss = sub.shape();
  return add(sub, tape.constant(tiled_positions(ss[0], ss[1], ss[2])));
}

Var Transformer::sub_block_body(Tape& tape, const SubBlock& block, Var x, const Batch& batch,
                                Var memory, ForwardContext& ctx) {
  const std::string p = layer_prefix(block.part, block.layer);
  const double eps = config_.layernorm_eps;
  const auto norm = [&](const std::string& name) {
    return layernorm(x, param(tape, name + ".g"), param(tape, name + ".b"), eps);
  };
  const reg::RegularizerSpec& rs = spec(ctx);
  AttentionOptions options;
  options.heads = config_.heads;
  options.attention_dropout = config_.attention_dropout;
  if (rs.applies_to(block.part)) {
    options.kind = rs.attention_kind;
    options.rate = rs.attention_rate;
  }
  const std::size_t steps = x.shape()[1];
  switch (block.kind) {
    case BlockKind::self_attention: {
      const bool causal = block.part == reg::Part::decoder;
      const Tensor mask = self_mask(batch, causal, steps);
      options.additive_mask = &mask;
      if (ctx.attention != nullptr && !causal && block.layer + 1 == config_.enc_layers) {
        options.capture = &ctx.attention->encoder_self;
      }
      const Var h = norm(p + "ln_self");
      return multi_head_attention(h, h, h, attention_weights(tape, p + "self"), options, ctx);
    }
    case BlockKind::cross_attention: {
      const Tensor mask = cross_mask(batch, steps);
      options.additive_mask = &mask;
      if (ctx.attention != nullptr && block.layer + 1 == config_.dec_layers) {
        options.capture = &ctx.attention->cross;
      }
      const Var h = norm(p + "ln_cross");
      return multi_head_attention(h, memory, memory, attention_weights(tape, p + "cross"),
                                  options, ctx);
    }
    case BlockKind::feed_forward: {
      const Var h = norm(p + "ln_ffn");
      const Var hidden =
          relu(add_bias(matmul(h, param(tape, p + "ffn.w1")), param(tape, p + "ffn.b1")));
      return add_bias(matmul(hidden, param(tape, p + "ffn.w2")), param(tape, p + "ffn.b2"));
    }
  }
  throw std::logic_error("unknown sub-block kind");
}

Var Transformer::encode(Tape& tape, const Batch& batch, ForwardContext& ctx) {
  if (ctx.example_ids.empty()) ctx.example_ids = batch.example_ids;
  const std::size_t d = config_.embed_dim;
  Var x;
  if (config_.feature_dim > 0) {
    if (encoded_length(batch.src_len) > config_.max_seq_len) {
      throw DimensionError("source of " + std::to_string(batch.src_len) +
                           " frames exceeds max_seq_len after subsampling");
    }
    x = continuous_frontend(tape, tape.constant(batch.frames));
  } else {
    if (batch.src_len > config_.max_seq_len) {
      throw DimensionError("source length " + std::to_string(batch.src_len) +
                           " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    const Var table = param(tape, config_.share_embeddings ? "embed" : "src_embed");
    const Var emb = embedding_lookup(table, batch.src, batch.size, batch.src_len);
    x = add(scale(emb, std::sqrt(static_cast<double>(d))),
            tape.constant(tiled_positions(batch.size, batch.src_len, d)));
  }
  const reg::RegularizerSpec& rs = spec(ctx);
  const Var none;
  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    for (BlockKind kind : {BlockKind::self_attention, BlockKind::feed_forward}) {
      const SubBlock block{kind, reg::Part::encoder, l};
      x = residual_sub_block(
          x, block, [&](Var in) { return sub_block_body(tape, block, in, batch, none, ctx); }, rs,
          ctx);
    }
  }
  const Var memory =
      layernorm(x, param(tape, "enc.ln_final.g"), param(tape, "enc.ln_final.b"),
                config_.layernorm_eps);
  if (ctx.probe != nullptr) ctx.probe->memory = memory.value();
  return memory;
}

Var Transformer::decode(Tape& tape, Var memory, const Batch& batch, std::span<const int> tgt_in,
                        std::size_t steps, ForwardContext& ctx) {
  if (ctx.example_ids.empty()) ctx.example_ids = batch.example_ids;
  if (steps > config_.max_seq_len) {
    throw DimensionError("target length " + std::to_string(steps) + " exceeds max_seq_len " +
                         std::to_string(config_.max_seq_len));
  }
  const std::size_t d = config_.embed_dim;
  const Var table = param(tape, config_.share_embeddings ? "embed" : "tgt_embed");
  Var y = add(scale(embedding_lookup(table, tgt_in, batch.size, steps),
                    std::sqrt(static_cast<double>(d))),
              tape.constant(tiled_positions(batch.size, steps, d)));
  const reg::RegularizerSpec& rs = spec(ctx);
  for (std::size_t l = 0; l < config_.dec_layers; ++l) {
    for (BlockKind kind :
         {BlockKind::self_attention, BlockKind::cross_attention, BlockKind::feed_forward}) {
      const SubBlock block{kind, reg::Part::decoder, l};
      y = residual_sub_block(
          y, block, [&](Var in) { return sub_block_body(tape, block, in, batch, memory, ctx); },
          rs, ctx);
    }
  }
  const Var h = layernorm(y, param(tape, "dec.ln_final.g"), param(tape, "dec.ln_final.b"),
                          config_.layernorm_eps);
  return add_bias(matmul(h, param(tape, "out.w")), param(tape, "out.b"));
}

Var Transformer::forward(Tape& tape, const Batch& batch, ForwardContext& ctx) {
  const Var memory = encode(tape, batch, ctx);
  return decode(tape, memory, batch, batch.tgt_in, batch.tgt_len, ctx);
}

Var Transformer::loss(Tape& tape, const Batch& batch, ForwardContext& ctx) {
  const Var logits = forward(tape, batch, ctx);
  return cross_entropy_label_smoothed(logits, batch.tgt_out, config_.label_smoothing, kPadId);
}

std::vector<std::vector<int>> greedy_decode(Transformer& model, const Batch& batch,
                                            std::size_t max_len) {
  std::vector<std::vector<int>> out(batch.size);
  if (max_len == 0) return out;
  ForwardContext ctx;  // inference: every regularizer is off
  Tensor memory;
  {
    Tape tape;
    tape.set_grad_enabled(false);
    memory = model.encode(tape, batch, ctx).value();
  }
  const std::size_t vocab = model.config().tgt_vocab;
  std::vector<bool> done(batch.size, false);
  std::vector<std::vector<int>> prefix(batch.size, std::vector<int>{kBosId});
  for (std::size_t step = 0; step < max_len; ++step) {
    const std::size_t steps = step + 1;
    std::vector<int> ids;
    ids.reserve(batch.size * steps);
    for (const auto& p : prefix) ids.insert(ids.end(), p.begin(), p.end());
    Tape tape;
    tape.set_grad_enabled(false);
    const Var logits = model.decode(tape, tape.constant(memory), batch, ids, steps, ctx);
    const auto& lv = logits.value().storage();
    bool all_done = true;
    for (std::size_t b = 0; b < batch.size; ++b) {
      int token = kEosId;
      if (!done[b]) {
        const double* row = lv.data() + (b * steps + step) * vocab;
        token = static_cast<int>(std::max_element(row, row + vocab) - row);
        if (token == kEosId) {
          done[b] = true;
        } else {
          out[b].push_back(token);
        }
      }
      prefix[b].push_back(token);
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace dropdim::model
