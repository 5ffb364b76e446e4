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
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dropdim/rng.hpp"
#include "dropdim/tensor.hpp"

// DropDim (random and span variants) and the baseline regularizers, as pure
// functions of (input, rng). Inference mode is the identity for all of them.
namespace dropdim::reg {

enum class Mode { train, inference };

enum class MaskVariant { random, span };

// How the Bernoulli parameter of the random variant is read. The default
// treats p as the probability of dropping a dimension.
enum class BernoulliReading { drop_probability, keep_probability };

// Keep/drop indicator over the D embedding dimensions of one example.
struct DimMask {
  std::vector<bool> keep;
  // D / kept_count. Zero only for an all-dropped mask, which the samplers
  // never return unless resampling was disabled.
  double norm_factor = 1.0;
  MaskVariant variant = MaskVariant::random;
  double rate = 0.0;
  std::size_t max_span = 0;
  std::size_t span_start = 0;
  std::size_t span_length = 0;

  static DimMask full_keep(std::size_t dim);
  // Builds a mask from explicit keep flags; norm_factor derived.
  static DimMask from_keep(std::vector<bool> keep);

  std::size_t dim() const { return keep.size(); }
  std::size_t kept_count() const;
  std::vector<std::size_t> dropped_indices() const;
};

struct RandomMaskOptions {
  BernoulliReading reading = BernoulliReading::drop_probability;
  // Resample when every dimension was dropped.
  bool resample_all_dropped = true;
  int max_attempts = 100;
};

// Each dimension dropped independently with probability p.
DimMask sample_dim_mask_random(std::size_t dim, double p, Rng& rng,
                               const RandomMaskOptions& options = {});

// Span length l uniform on {0..max_span}, start s uniform on {0..D-l};
// dimensions [s, s+l) are dropped. Requires max_span < D.
DimMask sample_dim_mask_span(std::size_t dim, std::size_t max_span, Rng& rng);

// h is [T,D] (or [B,T,D] with the same mask for every example). Train mode
// zeroes dropped columns and multiplies kept entries by norm_factor.
Tensor apply_dim_mask(const Tensor& h, const DimMask& mask, Mode mode);

// Inverted element-wise dropout.
Tensor apply_dropout(const Tensor& h, double p, Rng& rng, Mode mode);

// Zeroes attention weights independently with probability p, then
// renormalizes each row to sum to one. A row that loses every weight becomes
// uniform. attn is row-stochastic along its last axis.
Tensor apply_dropattention(const Tensor& attn, double p, Rng& rng, Mode mode);

// per_head is [H,T,d]. Drops whole heads with probability p, always keeping
// at least one, and scales kept heads by H/kept.
Tensor apply_drophead(const Tensor& per_head, double p, Rng& rng, Mode mode);

// Head keep flags for one example; shared by apply_drophead and the tape op.
std::vector<bool> sample_head_keep(std::size_t heads, double p, Rng& rng);

enum class ResidualKind { none, dropout, dropdim_random, dropdim_span };
enum class AttentionKind { none, dropattention, drophead };
enum class Part { encoder, decoder, all };

struct RegularizerSpec {
  ResidualKind kind = ResidualKind::none;
  double rate = 0.0;
  std::size_t max_span = 0;
  AttentionKind attention_kind = AttentionKind::none;
  double attention_rate = 0.0;
  Part part = Part::all;
  BernoulliReading reading = BernoulliReading::drop_probability;

  // Throws ParameterError when a field is outside its domain for the given
  // embedding size.
  void validate(std::size_t embed_dim) const;
  bool applies_to(Part block_part) const { return part == Part::all || part == block_part; }
};

// Best settings reported for the three sequence tasks.
enum class ReferenceTask { asr, mt, st };
RegularizerSpec reference_setting(ReferenceTask task, ResidualKind kind);

std::string_view to_string(MaskVariant v);
std::string_view to_string(ResidualKind k);
std::string_view to_string(AttentionKind k);
std::string_view to_string(Part p);
std::string_view to_string(BernoulliReading r);
// Accept both '_' and '-' separators ("dropdim-random" == "dropdim_random").
MaskVariant parse_mask_variant(std::string_view s);
ResidualKind parse_residual_kind(std::string_view s);
AttentionKind parse_attention_kind(std::string_view s);
Part parse_part(std::string_view s);
BernoulliReading parse_bernoulli_reading(std::string_view s);

struct MaskRecord {
  std::uint64_t step = 0;
  std::uint64_t example_id = 0;
  std::string location;
  MaskVariant variant = MaskVariant::random;
  std::vector<std::uint32_t> dropped;
  double norm_factor = 1.0;

  friend bool operator==(const MaskRecord&, const MaskRecord&) = default;
};

// Append-only log of sampled DimMasks.
class MaskTrace {
 public:
  void append(MaskRecord record) { records_.push_back(std::move(record)); }
  void append(std::uint64_t step, std::uint64_t example_id, std::string location,
              const DimMask& mask);

  const std::vector<MaskRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // step,example_id,location,variant,dropped_indices,norm_factor
  void write_csv(std::ostream& out) const;
  static MaskTrace read_csv(std::istream& in);

  friend bool operator==(const MaskTrace&, const MaskTrace&) = default;

 private:
  std::vector<MaskRecord> records_;
};

}  // namespace dropdim::reg
