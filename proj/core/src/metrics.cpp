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
#include "dropdim/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <unordered_map>

#include "dropdim/errors.hpp"

namespace dropdim::data {
namespace {

template <typename Tok>
std::map<std::vector<Tok>, std::size_t> ngram_counts(const std::vector<Tok>& seq, std::size_t n) {
  std::map<std::vector<Tok>, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<Tok>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                              seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

template <typename Tok>
BleuStats bleu_impl(const std::vector<std::vector<Tok>>& hyps,
                    const std::vector<std::vector<Tok>>& refs) {
  if (hyps.size() != refs.size()) {
    throw DimensionError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");
  }
  std::size_t matched[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  BleuStats st;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    st.hyp_length += hyps[s].size();
    st.ref_length += refs[s].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngram_counts(hyps[s], n);
      const auto r = ngram_counts(refs[s], n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) matched[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool any_zero = false;
  for (int n = 0; n < 4; ++n) {
    st.precisions[n] = total[n] ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;
    if (st.precisions[n] == 0.0) any_zero = true;
    else log_sum += std::log(st.precisions[n]);
  }
  if (st.hyp_length == 0) {
    st.brevity_penalty = 0.0;
  } else if (st.hyp_length > st.ref_length) {
    st.brevity_penalty = 1.0;
  } else {
    st.brevity_penalty = std::exp(1.0 - static_cast<double>(st.ref_length) /
                                            static_cast<double>(st.hyp_length));
  }
  st.score = any_zero ? 0.0 : 100.0 * st.brevity_penalty * std::exp(log_sum / 4.0);
  return st;
}

}  // namespace

std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

double wer(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) throw ParameterError("wer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double corpus_wer(const std::vector<std::vector<int>>& hyps,
                  const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size()) throw DimensionError("corpus_wer: hyp/ref count mismatch");
  std::size_t edits = 0, words = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    edits += edit_distance(hyps[i], refs[i]);
    words += refs[i].size();
  }
  if (words == 0) throw ParameterError("corpus_wer: empty references");
  return static_cast<double>(edits) / static_cast<double>(words);
}

BleuStats bleu_stats(const std::vector<std::vector<int>>& hyps,
                     const std::vector<std::vector<int>>& refs) {
  return bleu_impl(hyps, refs);
}

double bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
  return bleu_impl(hyps, refs).score;
}

double bleu(const std::vector<std::vector<std::string>>& hyps,
            const std::vector<std::vector<std::string>>& refs) {
  auto lower = [](std::vector<std::vector<std::string>> v) {
    for (auto& sent : v)
      for (auto& tok : sent)
        for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return v;
  };
  return bleu_impl(lower(hyps), lower(refs)).score;
}

}  // namespace dropdim::data
