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
#include "dropdim/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dropdim/checkpoint.hpp"
#include "dropdim/errors.hpp"
#include "dropdim/vocab.hpp"
#include "parse_util.hpp"

namespace dropdim::harness {
namespace {

using detail::fmt;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  return out;
}

bool better(double a, double b, bool higher) { return higher ? a > b : a < b; }

std::string token_label(char prefix, std::size_t i, int token) {
  return std::string(1, prefix) + std::to_string(i) + ":" + std::to_string(token);
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ParameterError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

LoadedRun load_run(const std::filesystem::path& dir) {
  RunConfig config = RunConfig::load(dir / "config.txt");
  config.validate();
  data::Dataset data = data::generate_dataset(config.task);
  model::Transformer model = model::load_checkpoint(dir / "model.ckpt");
  if (model.config().to_text() != config.model.to_text()) {
    throw ConfigError("checkpoint model config does not match " + (dir / "config.txt").string());
  }
  return {std::move(config), std::move(data), std::move(model)};
}

EvalResult cmd_eval(const std::filesystem::path& run_dir, const std::string& split) {
  LoadedRun run = load_run(run_dir);
  return evaluate(run.model, run.data.split(split), run.config.task, run.config.optim.batch_size,
                  true);
}

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "p") return SweepAxis::p;
  if (s == "alpha") return SweepAxis::alpha;
  throw ConfigError("sweep axis must be p or alpha, got '" + std::string(s) + "'");
}

std::string_view to_string(SweepAxis axis) { return axis == SweepAxis::p ? "p" : "alpha"; }

SweepResult run_sweep(const RunConfig& base_in, SweepAxis axis, const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds) {
  if (values.empty()) throw ConfigError("sweep: empty value list");
  if (seeds.empty()) throw ConfigError("sweep: empty seed list");
  RunConfig base = base_in;
  base.sync_derived();
  base.trace_masks = false;
  base.validate();
  const data::Dataset data = data::generate_dataset(base.task);

  SweepResult result;
  result.axis = axis;
  result.metric_name = task_metric_name(base.task);
  const bool higher = metric_higher_is_better(result.metric_name);
  for (double value : values) {
    RunConfig cfg = base;
    auto& r = cfg.model.residual_regularizer;
    if (axis == SweepAxis::p) {
      r.rate = value;
    } else {
      if (value < 0.0 || value != std::floor(value)) {
        throw ConfigError("sweep: alpha values must be non-negative integers");
      }
      r.max_span = static_cast<std::size_t>(value);
    }
    SweepRow row;
    row.value = value;
    std::vector<double> dev, test, loss;
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      const RunResult run = train(cfg, data);
      result.runs.push_back({value, seed, run.dev.metric, run.test.metric, run.final_train_loss});
      dev.push_back(run.dev.metric);
      test.push_back(run.test.metric);
      loss.push_back(run.final_train_loss);
    }
    row.dev_median = median(dev);
    row.test_median = median(test);
    row.train_loss_median = median(loss);
    result.rows.push_back(row);
  }
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    if (better(result.rows[i].dev_median, result.rows[result.best].dev_median, higher)) {
      result.best = i;
    }
  }
  result.rows[result.best].best = true;
  return result;
}

void write_sweep(const SweepResult& result, const std::filesystem::path& out) {
  auto table = open_out(out / "sweep.csv");
  table << "axis,value,metric_name,dev_median,test_median,train_loss_median,best\n";
  for (const auto& row : result.rows) {
    table << to_string(result.axis) << ',' << fmt(row.value) << ',' << result.metric_name << ','
          << fmt(row.dev_median) << ',' << fmt(row.test_median) << ','
          << fmt(row.train_loss_median) << ',' << (row.best ? 1 : 0) << '\n';
  }
  auto runs = open_out(out / "sweep_runs.csv");
  runs << "axis,value,seed,metric_name,dev_metric,test_metric,final_train_loss\n";
  for (const auto& r : result.runs) {
    runs << to_string(result.axis) << ',' << fmt(r.value) << ',' << r.seed << ','
         << result.metric_name << ',' << fmt(r.dev_metric) << ',' << fmt(r.test_metric) << ','
         << fmt(r.final_train_loss) << '\n';
  }
}

DataSweepResult run_data_sweep(const RunConfig& base_in, const std::vector<double>& fractions,
                               const std::vector<std::uint64_t>& seeds, bool augment) {
  if (fractions.empty()) throw ConfigError("data-sweep: empty fraction list");
  if (seeds.empty()) throw ConfigError("data-sweep: empty seed list");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw ParameterError("data-sweep: fraction " + fmt(f) + " outside (0,1]");
    }
  }
  RunConfig base = base_in;
  base.sync_derived();
  base.trace_masks = false;
  base.validate();
  const auto kind = base.model.residual_regularizer.kind;
  if (kind != reg::ResidualKind::dropdim_random && kind != reg::ResidualKind::dropdim_span) {
    throw ConfigError("data-sweep: reg.kind must be dropdim_random or dropdim_span");
  }
  if (augment && base.task.discrete()) {
    throw ConfigError("data-sweep: augmentation needs task.kind=toy_asr");
  }
  const data::Dataset data = data::generate_dataset(base.task);
  RunConfig baseline = base;
  baseline.model.residual_regularizer = reg::RegularizerSpec{};

  DataSweepResult result;
  result.metric_name = task_metric_name(base.task);
  for (double fraction : fractions) {
    const auto subset = data::subsample_train(data, fraction);
    for (bool augmented : augment ? std::vector<bool>{false, true} : std::vector<bool>{false}) {
      std::vector<data::ParallelPair> pairs = subset;
      if (augmented) {
        const auto extra = data::augment_asr(subset, base.task, base.task.seed ^ 0x5eedULL);
        pairs.insert(pairs.end(), extra.begin(), extra.end());
      }
      TrainOptions options;
      options.train_pairs = &pairs;
      DataSweepRow row;
      row.fraction = fraction;
      row.augmented = augmented;
      for (bool dropdim : {false, true}) {
        std::vector<double> dev, test;
        for (std::uint64_t seed : seeds) {
          RunConfig cfg = dropdim ? base : baseline;
          cfg.seed = seed;
          const RunResult run = train(cfg, data, options);
          result.runs.push_back(
              {fraction, dropdim, augmented, seed, pairs.size(), run.dev.metric, run.test.metric});
          dev.push_back(run.dev.metric);
          test.push_back(run.test.metric);
        }
        (dropdim ? row.dropdim_dev : row.baseline_dev) = median(dev);
        (dropdim ? row.dropdim_test : row.baseline_test) = median(test);
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

void write_data_sweep(const DataSweepResult& result, const std::filesystem::path& out) {
  auto table = open_out(out / "data_sweep.csv");
  table << "fraction,augment,metric_name,baseline_dev,dropdim_dev,baseline_test,dropdim_test\n";
  for (const auto& r : result.rows) {
    table << fmt(r.fraction) << ',' << (r.augmented ? 1 : 0) << ',' << result.metric_name << ','
          << fmt(r.baseline_dev) << ',' << fmt(r.dropdim_dev) << ',' << fmt(r.baseline_test)
          << ',' << fmt(r.dropdim_test) << '\n';
  }
  auto runs = open_out(out / "data_sweep_runs.csv");
  runs << "fraction,regularizer,augment,seed,train_pairs,metric_name,dev_metric,test_metric\n";
  for (const auto& r : result.runs) {
    runs << fmt(r.fraction) << ',' << (r.dropdim ? "dropdim" : "none") << ','
         << (r.augmented ? 1 : 0) << ',' << r.seed << ',' << r.train_pairs << ','
         << result.metric_name << ',' << fmt(r.dev_metric) << ',' << fmt(r.test_metric) << '\n';
  }
}

std::vector<TestTimeRow> testtime_drop(model::Transformer& model,
                                       const std::vector<data::ParallelPair>& pairs,
                                       reg::ResidualKind method, const std::vector<double>& rates,
                                       std::size_t mask_seeds, std::uint64_t seed,
                                       std::size_t batch_size) {
  if (method != reg::ResidualKind::dropout && method != reg::ResidualKind::dropdim_random) {
    throw ConfigError("testtime-drop: method must be dropout or dropdim_random");
  }
  if (rates.empty()) throw ConfigError("testtime-drop: empty rate list");
  for (double r : rates) {
    if (!(r >= 0.0 && r < 1.0)) throw ParameterError("testtime-drop: rate " + fmt(r) + " outside [0,1)");
  }
  if (mask_seeds == 0) throw ConfigError("testtime-drop: need at least one mask seed");
  const Rng root(mix_seed(seed));
  std::vector<TestTimeRow> rows;
  for (double rate : rates) {
    reg::RegularizerSpec spec;
    spec.kind = method;
    spec.rate = rate;
    TestTimeRow row;
    row.rate = rate;
    for (std::size_t s = 0; s < mask_seeds; ++s) {
      Rng rng = root.fork(s);
      row.accuracies.push_back(token_accuracy_with_regularizer(model, pairs, spec, rng, batch_size));
    }
    row.median = median(row.accuracies);
    row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) /
               static_cast<double>(row.accuracies.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_testtime(const std::vector<TestTimeRow>& rows, reg::ResidualKind method,
                    const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,rate,mask_seeds,metric_name,median,mean,min,max\n";
  for (const auto& r : rows) {
    const auto [lo, hi] = std::minmax_element(r.accuracies.begin(), r.accuracies.end());
    out << reg::to_string(method) << ',' << fmt(r.rate) << ',' << r.accuracies.size()
        << ",token_acc," << fmt(r.median) << ',' << fmt(r.mean) << ',' << fmt(*lo) << ','
        << fmt(*hi) << '\n';
  }
}

std::vector<AttentionMap> extract_attention(model::Transformer& model,
                                            const std::vector<data::ParallelPair>& pairs,
                                            std::size_t example) {
  if (example >= pairs.size()) {
    throw IndexError("export-attention: example " + std::to_string(example) + " out of range (" +
                     std::to_string(pairs.size()) + " examples)");
  }
  const model::Batch batch = make_batch(pairs, example, example + 1);
  model::AttentionCapture capture;
  {
    Tape tape;
    tape.set_grad_enabled(false);
    model::ForwardContext ctx;
    ctx.attention = &capture;
    model.forward(tape, batch, ctx);
  }
  const std::size_t heads = model.config().heads;
  const auto& pair = pairs[example];

  std::vector<std::string> source_labels;
  if (!pair.source.empty()) {
    for (std::size_t i = 0; i < pair.source.size(); ++i) {
      source_labels.push_back(token_label('s', i, pair.source[i]));
    }
  } else {
    // Encoder positions after subsampling cover frames [2i, 2i+1].
    const std::size_t n = model.encoded_length(pair.frames.dim(0));
    for (std::size_t i = 0; i < n; ++i) source_labels.push_back("f" + std::to_string(i));
  }
  std::vector<std::string> target_labels;
  for (std::size_t i = 0; i < batch.tgt_len; ++i) {
    target_labels.push_back(token_label('t', i, batch.tgt_in[i]));
  }

  auto split = [&](const std::string& name, const Tensor& all, std::vector<std::string> rows,
                   std::vector<std::string> cols) {
    AttentionMap map;
    map.name = name;
    const std::size_t r = all.dim(1), c = all.dim(2);
    if (r != rows.size() || c != cols.size()) {
      throw DimensionError("export-attention: captured " + all.shape().str() +
                           " does not match labels");
    }
    map.row_labels = std::move(rows);
    map.col_labels = std::move(cols);
    map.mean = Tensor(Shape{r, c});
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor head(Shape{r, c});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          head.at(i, j) = all.at(h, i, j);
          map.mean.at(i, j) += all.at(h, i, j) / static_cast<double>(heads);
        }
      map.heads.push_back(std::move(head));
    }
    return map;
  };
  return {split("enc_self", capture.encoder_self, source_labels, source_labels),
          split("cross", capture.cross, target_labels, source_labels)};
}

double row_entropy(std::span<const double> row) {
  double h = 0.0;
  for (double a : row) {
    if (a > 0.0) h -= a * std::log(a);
  }
  return h;
}

void write_attention(const std::vector<AttentionMap>& maps, const std::filesystem::path& out) {
  auto write = [&](const AttentionMap& map, const Tensor& m, const std::string& file) {
    auto csv = open_out(out / file);
    csv << "row";
    for (const auto& c : map.col_labels) csv << ',' << c;
    csv << ",entropy\n";
    const std::size_t cols = map.col_labels.size();
    for (std::size_t i = 0; i < map.row_labels.size(); ++i) {
      const std::span<const double> row = m.values().subspan(i * cols, cols);
      csv << map.row_labels[i];
      for (double a : row) csv << ',' << fmt(a);
      csv << ',' << fmt(row_entropy(row)) << '\n';
    }
  };
  for (const auto& map : maps) {
    for (std::size_t h = 0; h < map.heads.size(); ++h) {
      write(map, map.heads[h], map.name + ".head" + std::to_string(h) + ".csv");
    }
    write(map, map.mean, map.name + ".mean.csv");
  }
}

AuditOutcome cmd_audit(const std::filesystem::path& run_dir, double significance) {
  const RunConfig config = RunConfig::load(run_dir / "config.txt");
  const auto& spec = config.model.residual_regularizer;
  AuditOutcome outcome;
  reg::MaskTrace trace;
  const auto trace_path = run_dir / "mask_trace.csv";
  if (std::filesystem::exists(trace_path)) {
    std::ifstream in(trace_path);
    trace = reg::MaskTrace::read_csv(in);
  }
  if (trace.empty()) {
    outcome.empty = true;
    outcome.passed = true;
    outcome.text = "mask trace: 0 records (no DropDim masks were sampled)\n";
    return outcome;
  }
  reg::AuditParams params;
  params.dim = config.model.embed_dim;
  params.drop_probability =
      spec.reading == reg::BernoulliReading::keep_probability ? 1.0 - spec.rate : spec.rate;
  params.max_span = spec.max_span;
  outcome.report = reg::audit_masks(trace, params);

  for (const auto& r : trace.records()) {
    const bool decoder = r.location.rfind("dec.", 0) == 0;
    const reg::Part part = decoder ? reg::Part::decoder : reg::Part::encoder;
    if (!spec.applies_to(part)) {
      outcome.part_violations.push_back("step " + std::to_string(r.step) + ", example " +
                                        std::to_string(r.example_id) + ": mask at " + r.location +
                                        " but reg.part=" + std::string(reg::to_string(spec.part)));
    }
  }

  const auto& rep = outcome.report;
  bool ok = rep.consistent() && outcome.part_violations.empty();
  if (rep.binomial) ok = ok && rep.binomial->passes(significance);
  if (rep.span_length_test) ok = ok && rep.span_length_test->passes(significance);
  if (rep.span_start_test) ok = ok && rep.span_start_test->passes(significance);
  outcome.passed = ok;
  outcome.text = reg::format_report(rep, significance);
  for (const auto& v : outcome.part_violations) outcome.text += "part violation: " + v + "\n";
  outcome.text += std::string("audit: ") + (ok ? "PASS" : "FAIL") + "\n";
  return outcome;
}

}  // namespace dropdim::harness
