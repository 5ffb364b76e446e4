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
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dropdim/tensor.hpp"

// Synthetic sequence-to-sequence tasks standing in for ASR/MT/ST corpora.
// Ids 0-3 are reserved (pad, bos, eos, unk); content tokens are 4..V-1.
namespace dropdim::data {

enum class TaskKind { copy, reverse, toy_mt, toy_asr };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view s);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t vocab_size = 32;
  std::size_t min_len = 8;
  std::size_t max_len = 12;
  // toy_asr: std-dev of additive Gaussian frame noise. Discrete tasks:
  // probability that a training-split target token is replaced by a random
  // content token (dev/test targets stay clean).
  double noise = 0.0;
  std::size_t min_frames = 1;
  std::size_t max_frames = 3;
  std::size_t feature_dim = 16;
  std::size_t train_size = 500;
  std::size_t dev_size = 100;
  std::size_t test_size = 100;
  std::uint64_t seed = 1;

  // Throws ConfigError naming the field.
  void validate() const;
  bool set(std::string_view key, std::string_view value);
  std::vector<std::pair<std::string, std::string>> fields() const;
  bool discrete() const { return kind != TaskKind::toy_asr; }
};

struct ParallelPair {
  std::uint64_t id = 0;
  std::vector<int> source;  // discrete tasks
  Tensor frames;            // toy_asr: [T, F]
  std::vector<int> target;  // ends with EOS
};

struct Dataset {
  TaskSpec spec;
  std::vector<ParallelPair> train;
  std::vector<ParallelPair> dev;
  std::vector<ParallelPair> test;

  // "train" | "dev" | "test"
  const std::vector<ParallelPair>& split(std::string_view name) const;
};

// Fixed random bijection over content tokens used by toy_mt.
class ToyMtDictionary {
 public:
  ToyMtDictionary(std::size_t vocab_size, std::uint64_t seed);
  int encode(int token) const;
  int decode(int token) const;
  std::size_t vocab_size() const { return forward_.size(); }

 private:
  std::vector<int> forward_;
  std::vector<int> backward_;
};

// Dictionary lookup followed by swapping positions (2i, 2i+1).
std::vector<int> toy_mt_translate(const std::vector<int>& source, const ToyMtDictionary& dict);

// Deterministic in spec (including its seed). Source sequences (targets for
// toy_asr) are unique across all three splits.
Dataset generate_dataset(const TaskSpec& spec);

// First ceil(fraction * N) training pairs of a seeded permutation; smaller
// fractions are prefixes of larger ones.
std::vector<ParallelPair> subsample_train(const Dataset& data, double fraction);

// Re-renders toy_asr utterances with fresh durations and noise, keeping the
// transcript. Used as the augmentation toggle of data sweeps.
std::vector<ParallelPair> augment_asr(const std::vector<ParallelPair>& pairs, const TaskSpec& spec,
                                      std::uint64_t seed);

// <dir>/<split>.tsv with "src ids<TAB>tgt ids" lines. toy_asr leaves the source
// column empty and adds <split>.frames.bin (little-endian f64) plus
// <split>.frames.idx ("id offset frame_count", offsets in frames).
void export_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset import_dataset(const TaskSpec& spec, const std::filesystem::path& dir);

}  // namespace dropdim::data
