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
#include <string>
#include <vector>

// Edit-distance and n-gram metrics over token sequences.
namespace dropdim::data {

// Levenshtein distance with unit substitution, insertion and deletion costs.
std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref);

// edit_distance / len(ref); may exceed 1. Throws on an empty reference.
double wer(std::span<const int> hyp, std::span<const int> ref);
// Total edits over total reference length.
double corpus_wer(const std::vector<std::vector<int>>& hyps,
                  const std::vector<std::vector<int>>& refs);

struct BleuStats {
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  double score = 0.0;  // 0-100
};

// Corpus BLEU-4: uniform weights, geometric mean of clipped n-gram
// precisions, brevity penalty, no smoothing.
BleuStats bleu_stats(const std::vector<std::vector<int>>& hyps,
                     const std::vector<std::vector<int>>& refs);
double bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs);
// Case-insensitive over whitespace-free string tokens.
double bleu(const std::vector<std::vector<std::string>>& hyps,
            const std::vector<std::vector<std::string>>& refs);

}  // namespace dropdim::data
