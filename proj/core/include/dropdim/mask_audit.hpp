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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dropdim/structured_dropout.hpp"

namespace dropdim::reg {

struct ChiSquareResult {
  double statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;
  bool passes(double significance) const { return p_value >= significance; }
};

// Mean dropped count per mask against Binomial(D, p).
struct BinomialResult {
  double expected_mean = 0.0;
  double observed_mean = 0.0;
  double standard_error = 0.0;
  double z_score = 0.0;
  double p_value = 1.0;  // two-sided, normal approximation
  bool within_sigma(double k) const { return std::abs(z_score) <= k; }
  bool passes(double significance) const { return p_value >= significance; }
};

// Chi-square goodness of fit of `counts` against a uniform distribution.
ChiSquareResult chi_square_uniform(const std::vector<std::uint64_t>& counts);
// Sums per-group chi-square statistics and degrees of freedom.
ChiSquareResult combine_chi_square(const std::vector<ChiSquareResult>& parts);
BinomialResult binomial_mean_test(double observed_mean, std::size_t samples, std::size_t trials,
                                  double p);

struct AuditParams {
  std::size_t dim = 0;
  // Effective per-dimension drop probability of random-variant masks.
  double drop_probability = 0.0;
  std::size_t max_span = 0;
};

struct NormFactorMismatch {
  std::uint64_t step = 0;
  std::uint64_t example_id = 0;
  std::string location;
  double expected = 0.0;
  double recorded = 0.0;
};

struct AuditReport {
  std::size_t records = 0;
  std::size_t random_records = 0;
  std::size_t span_records = 0;
  double drop_rate = 0.0;  // dropped dimensions / (records * D)
  std::optional<BinomialResult> binomial;
  std::vector<std::uint64_t> span_length_histogram;  // index = l
  std::vector<std::uint64_t> span_start_histogram;   // index = s
  std::optional<ChiSquareResult> span_length_test;
  // Pooled over span lengths: s | l is uniform on {0..D-l}.
  std::optional<ChiSquareResult> span_start_test;
  std::vector<NormFactorMismatch> mismatches;
  std::vector<std::string> structural_errors;

  bool consistent() const { return mismatches.empty() && structural_errors.empty(); }
};

// Throws ParameterError on an empty trace.
AuditReport audit_masks(const MaskTrace& trace, const AuditParams& params);

// Human-readable multi-line summary.
std::string format_report(const AuditReport& report, double significance = 0.01);

}  // namespace dropdim::reg
