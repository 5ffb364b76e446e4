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
#include "dropdim/mask_audit.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <sstream>

#include "dropdim/errors.hpp"

namespace dropdim::reg {

ChiSquareResult chi_square_uniform(const std::vector<std::uint64_t>& counts) {
  ChiSquareResult r;
  if (counts.size() < 2) return r;
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total == 0.0) return r;
  const double expected = total / static_cast<double>(counts.size());
  for (auto c : counts) {
    const double diff = static_cast<double>(c) - expected;
    r.statistic += diff * diff / expected;
  }
  r.degrees_of_freedom = static_cast<double>(counts.size() - 1);
  boost::math::chi_squared dist(r.degrees_of_freedom);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

ChiSquareResult combine_chi_square(const std::vector<ChiSquareResult>& parts) {
  ChiSquareResult r;
  for (const auto& p : parts) {
    r.statistic += p.statistic;
    r.degrees_of_freedom += p.degrees_of_freedom;
  }
  if (r.degrees_of_freedom > 0.0) {
    boost::math::chi_squared dist(r.degrees_of_freedom);
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  }
  return r;
}

BinomialResult binomial_mean_test(double observed_mean, std::size_t samples, std::size_t trials,
                                  double p) {
  BinomialResult r;
  r.expected_mean = static_cast<double>(trials) * p;
  r.observed_mean = observed_mean;
  r.standard_error =
      std::sqrt(static_cast<double>(trials) * p * (1.0 - p) / static_cast<double>(samples));
  if (r.standard_error > 0.0) {
    r.z_score = (observed_mean - r.expected_mean) / r.standard_error;
    boost::math::normal unit;
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(unit, std::abs(r.z_score)));
  } else {
    // Degenerate p in {0,1}: any deviation is impossible under the null.
    r.z_score = observed_mean == r.expected_mean ? 0.0 : INFINITY;
    r.p_value = observed_mean == r.expected_mean ? 1.0 : 0.0;
  }
  return r;
}

AuditReport audit_masks(const MaskTrace& trace, const AuditParams& params) {
  if (trace.empty()) throw ParameterError("audit_masks: empty mask trace");
  if (params.dim == 0) throw ParameterError("audit_masks: embedding size must be positive");
  const std::size_t dim = params.dim;

  AuditReport report;
  report.records = trace.size();
  report.span_length_histogram.assign(params.max_span + 1, 0);
  report.span_start_histogram.assign(dim, 0);
  // starts_by_length[l][s]
  std::vector<std::vector<std::uint64_t>> starts_by_length(params.max_span + 1);
  for (std::size_t l = 0; l <= params.max_span && l <= dim; ++l) {
    starts_by_length[l].assign(dim - l + 1, 0);
  }

  double dropped_total = 0.0;
  double random_dropped = 0.0;
  for (const MaskRecord& r : trace.records()) {
    const std::string where = "step " + std::to_string(r.step) + ", example " +
                              std::to_string(r.example_id) + ", " + r.location;
    for (std::size_t i = 0; i < r.dropped.size(); ++i) {
      if (r.dropped[i] >= dim || (i > 0 && r.dropped[i] <= r.dropped[i - 1])) {
        report.structural_errors.push_back(where + ": invalid dropped index list");
        break;
      }
    }
    const std::size_t dropped = r.dropped.size();
    dropped_total += static_cast<double>(dropped);
    const std::size_t kept = dim - std::min(dropped, dim);
    const double expected = kept == 0 ? 0.0 : static_cast<double>(dim) / static_cast<double>(kept);
    if (r.norm_factor != expected) {
      report.mismatches.push_back({r.step, r.example_id, r.location, expected, r.norm_factor});
    }

    if (r.variant == MaskVariant::random) {
      ++report.random_records;
      random_dropped += static_cast<double>(dropped);
      continue;
    }
    ++report.span_records;
    const std::size_t length = dropped;
    const std::size_t start = dropped ? r.dropped.front() : 0;
    if (dropped && r.dropped.back() - r.dropped.front() + 1 != dropped) {
      report.structural_errors.push_back(where + ": span is not contiguous");
      continue;
    }
    if (length > params.max_span) {
      report.structural_errors.push_back(where + ": span length " + std::to_string(length) +
                                         " exceeds max span " + std::to_string(params.max_span));
      continue;
    }
    ++report.span_length_histogram[length];
    if (length > 0) {
      ++report.span_start_histogram[start];
      ++starts_by_length[length][start];
    }
  }
  report.drop_rate =
      dropped_total / (static_cast<double>(report.records) * static_cast<double>(dim));

  if (report.random_records > 0) {
    report.binomial = binomial_mean_test(random_dropped / static_cast<double>(report.random_records),
                                         report.random_records, dim, params.drop_probability);
  }
  if (report.span_records > 0 && params.max_span > 0) {
    report.span_length_test = chi_square_uniform(report.span_length_histogram);
    std::vector<ChiSquareResult> parts;
    // An empty span has no start index recorded, so l = 0 carries no
    // information about s.
    for (std::size_t l = 1; l < starts_by_length.size(); ++l) {
      parts.push_back(chi_square_uniform(starts_by_length[l]));
    }
    report.span_start_test = combine_chi_square(parts);
  }
  return report;
}

std::string format_report(const AuditReport& report, double significance) {
  std::ostringstream out;
  out << "records: " << report.records << " (random " << report.random_records << ", span "
      << report.span_records << ")\n";
  out << "drop_rate: " << report.drop_rate << '\n';
  if (report.binomial) {
    const auto& b = *report.binomial;
    out << "binomial: expected_mean=" << b.expected_mean << " observed_mean=" << b.observed_mean
        << " z=" << b.z_score << " p=" << b.p_value << ' '
        << (b.passes(significance) ? "PASS" : "FAIL") << '\n';
  }
  if (report.span_length_test) {
    const auto& c = *report.span_length_test;
    out << "span_length_chi2: stat=" << c.statistic << " dof=" << c.degrees_of_freedom
        << " p=" << c.p_value << ' ' << (c.passes(significance) ? "PASS" : "FAIL") << '\n';
    out << "span_length_histogram:";
    for (auto v : report.span_length_histogram) out << ' ' << v;
    out << '\n';
  }
  if (report.span_start_test) {
    const auto& c = *report.span_start_test;
    out << "span_start_chi2: stat=" << c.statistic << " dof=" << c.degrees_of_freedom
        << " p=" << c.p_value << ' ' << (c.passes(significance) ? "PASS" : "FAIL") << '\n';
  }
  for (const auto& m : report.mismatches) {
    out << "norm_factor mismatch at step " << m.step << ", example " << m.example_id << ", "
        << m.location << ": expected " << m.expected << ", recorded " << m.recorded << '\n';
  }
  for (const auto& e : report.structural_errors) out << "structural error: " << e << '\n';
  out << "consistency: " << (report.consistent() ? "OK" : "FAILED") << '\n';
  return out.str();
}

}  // namespace dropdim::reg
