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
#include <string>
#include <vector>

#include "dropdim/mask_audit.hpp"
#include "dropdim/run_config.hpp"
#include "dropdim/trainer.hpp"

// Experiment commands built on train(): sweeps, test-time dropping,
// attention export and mask audits.
namespace dropdim::harness {

double median(std::vector<double> values);

// ---- eval ---------------------------------------------------------------

struct LoadedRun {
  RunConfig config;
  data::Dataset data;
  model::Transformer model;
};
// Reads <dir>/config.txt and <dir>/model.ckpt and regenerates the dataset.
LoadedRun load_run(const std::filesystem::path& dir);

EvalResult cmd_eval(const std::filesystem::path& run_dir, const std::string& split);

// ---- sweep --------------------------------------------------------------

enum class SweepAxis { p, alpha };
SweepAxis parse_sweep_axis(std::string_view s);
std::string_view to_string(SweepAxis axis);

struct SweepRun {
  double value = 0.0;
  std::uint64_t seed = 0;
  double dev_metric = 0.0;
  double test_metric = 0.0;
  double final_train_loss = 0.0;
};

struct SweepRow {
  double value = 0.0;
  double dev_median = 0.0;
  double test_median = 0.0;
  double train_loss_median = 0.0;
  bool best = false;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::p;
  std::string metric_name;
  std::vector<SweepRun> runs;
  std::vector<SweepRow> rows;  // one per value, in input order
  std::size_t best = 0;        // index into rows; best median dev metric
};

// One training run per (value, seed); seeds replace config.seed. The
// dataset is shared. Throws ConfigError on an empty value or seed list.
SweepResult run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds);
// Writes <out>/sweep.csv and <out>/sweep_runs.csv.
void write_sweep(const SweepResult& result, const std::filesystem::path& out);

// ---- data-sweep ---------------------------------------------------------

struct DataSweepRun {
  double fraction = 0.0;
  bool dropdim = false;
  bool augmented = false;
  std::uint64_t seed = 0;
  std::size_t train_pairs = 0;
  double dev_metric = 0.0;
  double test_metric = 0.0;
};

struct DataSweepRow {
  double fraction = 0.0;
  bool augmented = false;
  double baseline_dev = 0.0;
  double dropdim_dev = 0.0;
  double baseline_test = 0.0;
  double dropdim_test = 0.0;
};

struct DataSweepResult {
  std::string metric_name;
  std::vector<DataSweepRun> runs;
  std::vector<DataSweepRow> rows;  // medians over seeds, paired
};

// For every fraction (seeded nested subsets): base config with reg.kind=none
// versus the base DropDim setting. `augment` adds a second pass with
// re-rendered toy_asr training audio appended. Fractions must lie in (0,1].
DataSweepResult run_data_sweep(const RunConfig& base, const std::vector<double>& fractions,
                               const std::vector<std::uint64_t>& seeds, bool augment);
void write_data_sweep(const DataSweepResult& result, const std::filesystem::path& out);

// ---- testtime-drop ------------------------------------------------------

struct TestTimeRow {
  double rate = 0.0;
  std::vector<double> accuracies;  // one per mask seed
  double median = 0.0;
  double mean = 0.0;
};

// Teacher-forced token accuracy on `pairs` with the regularizer forced on
// at inference. method: dropout | dropdim_random. Rates must lie in [0,1).
std::vector<TestTimeRow> testtime_drop(model::Transformer& model,
                                       const std::vector<data::ParallelPair>& pairs,
                                       reg::ResidualKind method, const std::vector<double>& rates,
                                       std::size_t mask_seeds, std::uint64_t seed,
                                       std::size_t batch_size);
void write_testtime(const std::vector<TestTimeRow>& rows, reg::ResidualKind method,
                    const std::filesystem::path& path);

// ---- export-attention ---------------------------------------------------

struct AttentionMap {
  std::string name;  // "enc_self" | "cross"
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<Tensor> heads;  // [rows, cols] each
  Tensor mean;
};

// Last encoder self-attention (T' x T') and last decoder cross-attention
// (T_tgt x T') of one example, teacher-forced in inference mode.
std::vector<AttentionMap> extract_attention(model::Transformer& model,
                                            const std::vector<data::ParallelPair>& pairs,
                                            std::size_t example);
// <out>/<name>.head<h>.csv and <out>/<name>.mean.csv with a row label
// column and a trailing per-row entropy column.
void write_attention(const std::vector<AttentionMap>& maps, const std::filesystem::path& out);
double row_entropy(std::span<const double> row);

// ---- audit --------------------------------------------------------------

struct AuditOutcome {
  bool empty = false;  // no DropDim masks were traced
  reg::AuditReport report;
  std::vector<std::string> part_violations;
  bool passed = false;
  std::string text;
};

// Audits <dir>/mask_trace.csv against <dir>/config.txt. Passes when every
// norm factor equals D/kept, locations respect reg.part, and the
// distribution tests pass at `significance`.
AuditOutcome cmd_audit(const std::filesystem::path& run_dir, double significance = 0.01);

}  // namespace dropdim::harness
