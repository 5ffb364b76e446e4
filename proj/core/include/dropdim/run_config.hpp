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
#include <string_view>
#include <utility>
#include <vector>

#include "dropdim/tasks.hpp"
#include "dropdim/transformer.hpp"

namespace dropdim::harness {

struct OptimConfig {
  double lr = 3e-3;  // peak step size, reached at the end of warmup
  std::size_t warmup = 400;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Everything a run depends on. Model vocabulary sizes and the frame width
// are derived from the task and kept in sync by sync_derived().
struct RunConfig {
  data::TaskSpec task;
  model::ModelConfig model;
  OptimConfig optim;
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  // Record every sampled DimMask in mask_trace.csv.
  bool trace_masks = true;

  void sync_derived();
  // Throws ConfigError naming the field.
  void validate() const;

  // Ordered key=value pairs; to_text() is the canonical form.
  std::vector<std::pair<std::string, std::string>> fields() const;
  std::string to_text() const;
  // Unknown keys and derived keys contradicting the task are errors.
  static RunConfig from_text(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void set(std::string_view key, std::string_view value);

  // 64-bit FNV-1a of to_text(), as 16 hex digits.
  std::string hash() const;
};

// Adam with inverse square-root warmup:
//   lr_t = lr * min(t / warmup, sqrt(warmup / t)),  t = 1, 2, ...
class Adam {
 public:
  explicit Adam(const OptimConfig& config) : config_(config) {}
  void step(model::ParameterStore& params);
  double current_lr() const;
  std::uint64_t steps() const { return t_; }

 private:
  OptimConfig config_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace dropdim::harness
