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
#include "dropdim/regularizer_ops.hpp"

#include <algorithm>

#include "dropdim/errors.hpp"

namespace dropdim::reg {

Var scale_elements(Var h, std::vector<double> factors) {
  if (factors.size() != h.value().numel()) {
    throw DimensionError("scale_elements: " + std::to_string(factors.size()) +
                         " factors for " + h.shape().str());
  }
  Tensor out(h.shape());
  const auto& in = h.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) ov[i] = in[i] * factors[i];
  const std::size_t ih = h.id();
  return h.tape().record(std::move(out), {ih},
                         [ih, factors = std::move(factors)](std::span<const double> g, Tape& t) {
                           auto d = t.grad_of(ih);
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factors[i];
                         });
}

Var dim_mask(Var h, std::span<const DimMask> masks) {
  const Shape& s = h.shape();
  if (s.rank() != 3 || masks.size() != s[0]) {
    throw DimensionError("dim_mask: " + std::to_string(masks.size()) + " masks for " + s.str());
  }
  const std::size_t batch = s[0], steps = s[1], dim = s[2];
  std::vector<double> factors(h.value().numel());
  for (std::size_t b = 0; b < batch; ++b) {
    const DimMask& m = masks[b];
    if (m.dim() != dim) {
      throw DimensionError("dim_mask: mask of length " + std::to_string(m.dim()) + " for " +
                           s.str());
    }
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < dim; ++j) {
        factors[(b * steps + t) * dim + j] = m.keep[j] ? m.norm_factor : 0.0;
      }
    }
  }
  return scale_elements(h, std::move(factors));
}

Var dropout(Var h, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout rate must lie in [0,1)");
  const double kept_scale = 1.0 / (1.0 - p);
  std::vector<double> factors(h.value().numel());
  for (double& f : factors) f = rng.bernoulli(p) ? 0.0 : kept_scale;
  return scale_elements(h, std::move(factors));
}

Var dropattention(Var attn, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("DropAttention rate must lie in [0,1)");
  const std::size_t n = attn.shape().back();
  const std::size_t rows = attn.value().numel() / n;
  const auto& in = attn.value().storage();
  std::vector<double> keep(in.size());
  std::vector<double> row_total(rows);
  Tensor out(attn.shape());
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = r * n + j;
      keep[i] = rng.bernoulli(p) ? 0.0 : 1.0;
      total += in[i] * keep[i];
    }
    row_total[r] = total;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = r * n + j;
      ov[i] = total > 0.0 ? in[i] * keep[i] / total : 1.0 / static_cast<double>(n);
    }
  }
  const std::size_t ia = attn.id();
  const std::size_t iy = attn.tape().size();
  return attn.tape().record(
      std::move(out), {ia},
      [ia, iy, n, rows, keep = std::move(keep), row_total = std::move(row_total)](
          std::span<const double> g, Tape& t) {
        const auto& y = t.value(iy).storage();
        auto d = t.grad_of(ia);
        for (std::size_t r = 0; r < rows; ++r) {
          // Uniform fallback rows are constant in attn.
          if (!(row_total[r] > 0.0)) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = r * n + j;
            d[i] += keep[i] / row_total[r] * (g[i] - dot);
          }
        }
      });
}

Var drophead(Var per_head, std::size_t heads, double p, Rng& rng) {
  const Shape& s = per_head.shape();
  if (s.rank() != 3 || heads == 0 || s[0] % heads != 0) {
    throw DimensionError("drophead: " + std::to_string(heads) + " heads for " + s.str());
  }
  const std::size_t batch = s[0] / heads;
  const std::size_t block = s[1] * s[2];
  std::vector<double> factors(per_head.value().numel());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::vector<bool> keep = sample_head_keep(heads, p, rng);
    const auto kept = static_cast<double>(std::count(keep.begin(), keep.end(), true));
    const double factor = static_cast<double>(heads) / kept;
    for (std::size_t h = 0; h < heads; ++h) {
      std::fill_n(factors.begin() + static_cast<std::ptrdiff_t>((b * heads + h) * block), block,
                  keep[h] ? factor : 0.0);
    }
  }
  return scale_elements(per_head, std::move(factors));
}

}  // namespace dropdim::reg
