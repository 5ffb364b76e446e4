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
#include "dropdim/structured_dropout.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "dropdim/errors.hpp"

namespace dropdim::reg {
namespace {

void check_rate(const char* what, double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError(std::string(what) + " rate must lie in [0,1), got " + std::to_string(p));
  }
}

std::string normalize_token(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c == '-') c = '_';
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

DimMask DimMask::full_keep(std::size_t dim) { return from_keep(std::vector<bool>(dim, true)); }

DimMask DimMask::from_keep(std::vector<bool> keep) {
  DimMask m;
  m.keep = std::move(keep);
  const std::size_t kept = m.kept_count();
  m.norm_factor = kept == 0 ? 0.0 : static_cast<double>(m.dim()) / static_cast<double>(kept);
  return m;
}

std::size_t DimMask::kept_count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
}

std::vector<std::size_t> DimMask::dropped_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (!keep[j]) out.push_back(j);
  }
  return out;
}

DimMask sample_dim_mask_random(std::size_t dim, double p, Rng& rng,
                               const RandomMaskOptions& options) {
  if (dim == 0) throw ParameterError("DimMask needs at least one dimension");
  check_rate("DropDim(random)", p);
  const double drop_p =
      options.reading == BernoulliReading::drop_probability ? p : 1.0 - p;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    std::vector<bool> keep(dim);
    for (std::size_t j = 0; j < dim; ++j) keep[j] = !rng.bernoulli(drop_p);
    DimMask m = DimMask::from_keep(std::move(keep));
    m.variant = MaskVariant::random;
    m.rate = p;
    if (m.kept_count() > 0 || !options.resample_all_dropped) return m;
  }
  throw ParameterError("DropDim(random): every dimension dropped in " +
                       std::to_string(options.max_attempts) + " attempts (D=" +
                       std::to_string(dim) + ", p=" + std::to_string(p) + ")");
}

DimMask sample_dim_mask_span(std::size_t dim, std::size_t max_span, Rng& rng) {
  if (dim == 0) throw ParameterError("DimMask needs at least one dimension");
  if (max_span >= dim) {
    throw ParameterError("DropDim(span): max span " + std::to_string(max_span) +
                         " must be smaller than D=" + std::to_string(dim));
  }
  const std::size_t length = rng.uniform_int(max_span + 1);
  const std::size_t start = rng.uniform_int(dim - length + 1);
  std::vector<bool> keep(dim, true);
  for (std::size_t j = start; j < start + length; ++j) keep[j] = false;
  DimMask m = DimMask::from_keep(std::move(keep));
  m.variant = MaskVariant::span;
  m.max_span = max_span;
  m.span_start = start;
  m.span_length = length;
  return m;
}

Tensor apply_dim_mask(const Tensor& h, const DimMask& mask, Mode mode) {
  if (h.rank() < 2 || h.shape().back() != mask.dim()) {
    throw DimensionError("apply_dim_mask: mask of length " + std::to_string(mask.dim()) +
                         " for input " + h.shape().str());
  }
  if (mode == Mode::inference) return h;
  const std::size_t dim = mask.dim();
  std::vector<double> column_scale(dim);
  for (std::size_t j = 0; j < dim; ++j) column_scale[j] = mask.keep[j] ? mask.norm_factor : 0.0;
  Tensor out(h.shape());
  const auto& in = h.storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) ov[i] = in[i] * column_scale[i % dim];
  return out;
}

Tensor apply_dropout(const Tensor& h, double p, Rng& rng, Mode mode) {
  check_rate("dropout", p);
  if (mode == Mode::inference) return h;
  const double kept_scale = 1.0 / (1.0 - p);
  Tensor out(h.shape());
  const auto& in = h.storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    ov[i] = in[i] * (rng.bernoulli(p) ? 0.0 : kept_scale);
  }
  return out;
}

Tensor apply_dropattention(const Tensor& attn, double p, Rng& rng, Mode mode) {
  check_rate("DropAttention", p);
  if (mode == Mode::inference) return attn;
  const std::size_t n = attn.shape().back();
  const std::size_t rows = attn.numel() / n;
  Tensor out = attn;
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = ov.subspan(r * n, n);
    double total = 0.0;
    for (double& w : row) {
      if (rng.bernoulli(p)) w = 0.0;
      total += w;
    }
    if (total > 0.0) {
      for (double& w : row) w /= total;
    } else {
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(n));
    }
  }
  return out;
}

std::vector<bool> sample_head_keep(std::size_t heads, double p, Rng& rng) {
  check_rate("DropHead", p);
  if (heads == 0) throw ParameterError("DropHead needs at least one head");
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<bool> keep(heads);
    bool any = false;
    for (std::size_t h = 0; h < heads; ++h) {
      keep[h] = !rng.bernoulli(p);
      any = any || keep[h];
    }
    if (any) return keep;
  }
  throw ParameterError("DropHead: every head dropped in " + std::to_string(kMaxAttempts) +
                       " attempts");
}

Tensor apply_drophead(const Tensor& per_head, double p, Rng& rng, Mode mode) {
  check_rate("DropHead", p);
  if (per_head.rank() != 3) {
    throw DimensionError("apply_drophead expects [H,T,d], got " + per_head.shape().str());
  }
  if (mode == Mode::inference) return per_head;
  const std::size_t heads = per_head.dim(0);
  const std::vector<bool> keep = sample_head_keep(heads, p, rng);
  const auto kept = static_cast<double>(std::count(keep.begin(), keep.end(), true));
  const double factor = static_cast<double>(heads) / kept;
  const std::size_t block = per_head.numel() / heads;
  Tensor out(per_head.shape());
  const auto& in = per_head.storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) ov[i] = in[i] * (keep[i / block] ? factor : 0.0);
  return out;
}

void RegularizerSpec::validate(std::size_t embed_dim) const {
  if (kind == ResidualKind::dropout || kind == ResidualKind::dropdim_random) {
    check_rate(kind == ResidualKind::dropout ? "dropout" : "DropDim(random)", rate);
  }
  if (kind == ResidualKind::dropdim_span && max_span >= embed_dim) {
    throw ParameterError("DropDim(span): max span " + std::to_string(max_span) +
                         " must be smaller than D=" + std::to_string(embed_dim));
  }
  if (attention_kind != AttentionKind::none) {
    check_rate(attention_kind == AttentionKind::dropattention ? "DropAttention" : "DropHead",
               attention_rate);
  }
}

RegularizerSpec reference_setting(ReferenceTask task, ResidualKind kind) {
  RegularizerSpec spec;
  spec.kind = kind;
  switch (task) {
    case ReferenceTask::asr:
      spec.rate = 0.01;
      spec.max_span = 10;
      break;
    case ReferenceTask::mt:
      spec.rate = 0.05;
      spec.max_span = 40;
      break;
    case ReferenceTask::st:
      spec.rate = 0.10;
      spec.max_span = 30;
      break;
  }
  return spec;
}

std::string_view to_string(MaskVariant v) { return v == MaskVariant::random ? "random" : "span"; }

std::string_view to_string(ResidualKind k) {
  switch (k) {
    case ResidualKind::none: return "none";
    case ResidualKind::dropout: return "dropout";
    case ResidualKind::dropdim_random: return "dropdim_random";
    case ResidualKind::dropdim_span: return "dropdim_span";
  }
  return "none";
}

std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::dropattention: return "dropattention";
    case AttentionKind::drophead: return "drophead";
  }
  return "none";
}

std::string_view to_string(Part p) {
  switch (p) {
    case Part::encoder: return "encoder";
    case Part::decoder: return "decoder";
    case Part::all: return "all";
  }
  return "all";
}

std::string_view to_string(BernoulliReading r) {
  return r == BernoulliReading::drop_probability ? "drop" : "keep";
}

MaskVariant parse_mask_variant(std::string_view s) {
  const std::string t = normalize_token(s);
  if (t == "random") return MaskVariant::random;
  if (t == "span") return MaskVariant::span;
  throw ConfigError("unknown mask variant '" + std::string(s) + "'");
}

ResidualKind parse_residual_kind(std::string_view s) {
  const std::string t = normalize_token(s);
  if (t == "none") return ResidualKind::none;
  if (t == "dropout") return ResidualKind::dropout;
  if (t == "dropdim_random") return ResidualKind::dropdim_random;
  if (t == "dropdim_span") return ResidualKind::dropdim_span;
  throw ConfigError("unknown regularizer '" + std::string(s) + "'");
}

AttentionKind parse_attention_kind(std::string_view s) {
  const std::string t = normalize_token(s);
  if (t == "none") return AttentionKind::none;
  if (t == "dropattention") return AttentionKind::dropattention;
  if (t == "drophead") return AttentionKind::drophead;
  throw ConfigError("unknown attention regularizer '" + std::string(s) + "'");
}

Part parse_part(std::string_view s) {
  const std::string t = normalize_token(s);
  if (t == "encoder") return Part::encoder;
  if (t == "decoder") return Part::decoder;
  if (t == "all") return Part::all;
  throw ConfigError("unknown model part '" + std::string(s) + "'");
}

BernoulliReading parse_bernoulli_reading(std::string_view s) {
  const std::string t = normalize_token(s);
  if (t == "drop") return BernoulliReading::drop_probability;
  if (t == "keep") return BernoulliReading::keep_probability;
  throw ConfigError("unknown Bernoulli reading '" + std::string(s) + "' (drop|keep)");
}

void MaskTrace::append(std::uint64_t step, std::uint64_t example_id, std::string location,
                       const DimMask& mask) {
  MaskRecord r;
  r.step = step;
  r.example_id = example_id;
  r.location = std::move(location);
  r.variant = mask.variant;
  for (std::size_t j : mask.dropped_indices()) r.dropped.push_back(static_cast<std::uint32_t>(j));
  r.norm_factor = mask.norm_factor;
  records_.push_back(std::move(r));
}

void MaskTrace::write_csv(std::ostream& out) const {
  out << "step,example_id,location,variant,dropped_indices,norm_factor\n";
  for (const MaskRecord& r : records_) {
    out << r.step << ',' << r.example_id << ',' << r.location << ',' << to_string(r.variant)
        << ',';
    for (std::size_t i = 0; i < r.dropped.size(); ++i) {
      if (i) out << ';';
      out << r.dropped[i];
    }
    out << ',' << format_double(r.norm_factor) << '\n';
  }
}

MaskTrace MaskTrace::read_csv(std::istream& in) {
  MaskTrace trace;
  std::string line;
  if (!std::getline(in, line) ||
      line != "step,example_id,location,variant,dropped_indices,norm_factor") {
    throw FormatError("mask trace: missing or unexpected header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 6) {
      throw FormatError("mask trace line " + std::to_string(line_no) + ": expected 6 fields");
    }
    try {
      MaskRecord r;
      r.step = std::stoull(fields[0]);
      r.example_id = std::stoull(fields[1]);
      r.location = fields[2];
      r.variant = parse_mask_variant(fields[3]);
      std::stringstream idx(fields[4]);
      std::string tok;
      while (std::getline(idx, tok, ';')) {
        if (!tok.empty()) r.dropped.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
      }
      r.norm_factor = std::stod(fields[5]);
      trace.append(std::move(r));
    } catch (const std::logic_error& e) {
      throw FormatError("mask trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

}  // namespace dropdim::reg
