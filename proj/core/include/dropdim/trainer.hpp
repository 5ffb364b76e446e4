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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dropdim/run_config.hpp"
#include "dropdim/structured_dropout.hpp"
#include "dropdim/tasks.hpp"
#include "dropdim/transformer.hpp"

namespace dropdim::harness {

// One RunRecord CSV row: epoch,split,loss,metric_name,metric_value.
struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::string metric_name;
  double metric_value = 0.0;
};

struct EvalResult {
  double loss = 0.0;            // teacher-forced, label-smoothed
  double token_accuracy = 0.0;  // teacher-forced argmax over non-pad targets
  std::string metric_name;      // "bleu" or "wer"
  double metric = 0.0;          // from greedy decoding
};

struct RunResult {
  std::vector<EpochRecord> records;
  double final_train_loss = 0.0;
  EvalResult dev;
  EvalResult test;
  reg::MaskTrace trace;
  std::optional<model::Transformer> model;
  double wall_seconds = 0.0;
  std::string config_hash;
};

struct TrainOptions {
  // Replaces the dataset's training split (data sweeps, augmentation).
  const std::vector<data::ParallelPair>* train_pairs = nullptr;
  // Greedy-decode dev/test after the last epoch.
  bool decode = true;
};

// "bleu" for discrete tasks (higher is better), "wer" for toy_asr.
std::string task_metric_name(const data::TaskSpec& spec);
bool metric_higher_is_better(const std::string& name);

model::Batch make_batch(const std::vector<data::ParallelPair>& pairs, std::size_t begin,
                        std::size_t end, const std::vector<std::size_t>* order = nullptr);

// Inference-mode evaluation of a split. `decode` adds greedy decoding and
// the task metric; otherwise metric stays 0.
EvalResult evaluate(model::Transformer& model, const std::vector<data::ParallelPair>& pairs,
                    const data::TaskSpec& spec, std::size_t batch_size, bool decode);

// Teacher-forced token accuracy with `spec` applied in train mode using rng.
double token_accuracy_with_regularizer(model::Transformer& model,
                                       const std::vector<data::ParallelPair>& pairs,
                                       const reg::RegularizerSpec& spec, Rng& rng,
                                       std::size_t batch_size);

// Trains from scratch. Fully determined by `config`, `data` and options.
RunResult train(const RunConfig& config, const data::Dataset& data,
                const TrainOptions& options = {});

// cmd_train: generates the dataset, trains, and writes into config.out:
//   config.txt, record.csv, model.ckpt, mask_trace.csv (when traced),
//   meta.txt (wall time and config hash; not part of the determinism
//   contract).
RunResult cmd_train(const RunConfig& config);

void write_record_csv(const std::vector<EpochRecord>& records, const std::filesystem::path& path);
std::vector<EpochRecord> read_record_csv(const std::filesystem::path& path);

}  // namespace dropdim::harness
