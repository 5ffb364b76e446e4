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
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dropdim/errors.hpp"
#include "dropdim/experiments.hpp"
#include "dropdim/run_config.hpp"
#include "dropdim/trainer.hpp"
#include "dropdim/vocab.hpp"

namespace dropdim::harness {
namespace {

namespace fs = std::filesystem;

// A few seconds of training at most.
RunConfig tiny_config() {
  RunConfig c;
  c.task.kind = data::TaskKind::copy;
  c.task.vocab_size = 12;
  c.task.min_len = 3;
  c.task.max_len = 5;
  c.task.train_size = 32;
  c.task.dev_size = 8;
  c.task.test_size = 8;
  c.model.enc_layers = c.model.dec_layers = 1;
  c.model.heads = 2;
  c.model.embed_dim = 16;
  c.model.ffn_dim = 32;
  c.optim.epochs = 2;
  c.optim.warmup = 10;
  c.sync_derived();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dropdim_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(RunConfig, TextRoundTripAndHash) {
  RunConfig c = tiny_config();
  c.model.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
  c.model.residual_regularizer.max_span = 4;
  c.out = "somewhere/else";
  const RunConfig back = RunConfig::from_text("# comment\n" + c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  RunConfig d = c;
  d.seed = 2;
  EXPECT_NE(d.hash(), c.hash());
}

TEST(RunConfig, Errors) {
  EXPECT_THROW(RunConfig::from_text("bogus.key=1\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("task.vocab=abc\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("task.vocab=20\nmodel.tgt_vocab=32\n"), ConfigError);
  EXPECT_NO_THROW(RunConfig::from_text("task.vocab=20\nmodel.tgt_vocab=20\n"));
  RunConfig c = tiny_config();
  c.optim.batch_size = 0;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("optim.batch_size"), std::string::npos);
  }
  c = tiny_config();
  c.model.max_seq_len = 4;  // shorter than max_len + EOS
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Adam, WarmupScheduleAndFirstStep) {
  OptimConfig o;
  o.lr = 1e-2;
  o.warmup = 4;
  Adam adam(o);
  model::ParameterStore params;
  Tensor& w = params.add("w", Tensor::vector({1.0, -2.0}));
  const std::vector<double> expected_lr{0.25e-2, 0.5e-2, 0.75e-2, 1e-2, 1e-2 * std::sqrt(4.0 / 5.0)};
  for (std::size_t t = 0; t < expected_lr.size(); ++t) {
    params.zero_grad();
    w.accumulate_grad(std::vector<double>{0.5, -3.0});
    const double before = w[0];
    adam.step(params);
    EXPECT_DOUBLE_EQ(adam.current_lr(), expected_lr[t]);
    if (t == 0) {
      // Bias-corrected first step moves each weight by lr * g / (|g| + eps).
      EXPECT_NEAR(before - w[0], expected_lr[0] * 0.5 / (0.5 + o.eps), 1e-15);
    }
  }
  EXPECT_EQ(adam.steps(), 5u);
}

TEST(Train, DeterministicRecordsAndWeights) {
  const RunConfig c = tiny_config();
  const auto data = data::generate_dataset(c.task);
  const RunResult a = train(c, data), b = train(c, data);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    EXPECT_EQ(a.records[i].metric_value, b.records[i].metric_value);
  }
  for (std::size_t i = 0; i < a.model->parameters().size(); ++i)
    EXPECT_EQ(a.model->parameters().entries()[i].second.storage(),
              b.model->parameters().entries()[i].second.storage());
  EXPECT_EQ(a.config_hash, c.hash());
}

TEST(Train, RecordLayout) {
  const RunConfig c = tiny_config();
  const RunResult r = train(c, data::generate_dataset(c.task));
  // Per epoch: train + dev token_acc; then dev bleu, test token_acc, test bleu.
  ASSERT_EQ(r.records.size(), 2 * c.optim.epochs + 3);
  for (std::size_t e = 0; e < c.optim.epochs; ++e) {
    EXPECT_EQ(r.records[2 * e].epoch, e + 1);
    EXPECT_EQ(r.records[2 * e].split, "train");
    EXPECT_EQ(r.records[2 * e + 1].split, "dev");
  }
  EXPECT_EQ(r.records.back().metric_name, "bleu");
  EXPECT_EQ(r.final_train_loss, r.records[2 * (c.optim.epochs - 1)].loss);
}

TEST(Train, BaselineEquivalenceWithZeroRate) {
  RunConfig none = tiny_config();
  none.trace_masks = true;
  RunConfig zero = none;
  zero.model.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  zero.model.residual_regularizer.rate = 0.0;
  RunConfig zero_span = none;
  zero_span.model.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
  zero_span.model.residual_regularizer.max_span = 0;
  const auto data = data::generate_dataset(none.task);
  const RunResult a = train(none, data);
  for (const RunConfig* other : {&zero, &zero_span}) {
    const RunResult b = train(*other, data);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
      EXPECT_EQ(a.records[i].loss, b.records[i].loss) << i;
    for (std::size_t i = 0; i < a.model->parameters().size(); ++i)
      EXPECT_EQ(a.model->parameters().entries()[i].second.storage(),
                b.model->parameters().entries()[i].second.storage());
    ASSERT_FALSE(b.trace.empty());
    for (const auto& rec : b.trace.records()) {
      EXPECT_TRUE(rec.dropped.empty());
      EXPECT_EQ(rec.norm_factor, 1.0);
    }
  }
}

TEST(Train, CmdTrainWritesRunDirectory) {
  RunConfig c = tiny_config();
  c.model.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  c.model.residual_regularizer.rate = 0.2;
  c.out = scratch("cmd_train").string();
  const RunResult r = cmd_train(c);
  for (const char* f : {"config.txt", "record.csv", "model.ckpt", "mask_trace.csv", "meta.txt"})
    EXPECT_TRUE(fs::exists(fs::path(c.out) / f)) << f;
  EXPECT_EQ(slurp(fs::path(c.out) / "config.txt"), c.to_text());
  const auto records = read_record_csv(fs::path(c.out) / "record.csv");
  ASSERT_EQ(records.size(), r.records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(records[i].loss, r.records[i].loss);
    EXPECT_EQ(records[i].metric_value, r.records[i].metric_value);
    EXPECT_EQ(records[i].split, r.records[i].split);
  }
  EXPECT_NE(slurp(fs::path(c.out) / "meta.txt").find("config_hash=" + c.hash()), std::string::npos);

  // eval reloads the checkpoint and reproduces the final dev numbers.
  const EvalResult dev = cmd_eval(c.out, "dev");
  EXPECT_EQ(dev.loss, r.dev.loss);
  EXPECT_EQ(dev.metric, r.dev.metric);
  EXPECT_THROW(cmd_eval(c.out, "holdout"), ConfigError);

  const AuditOutcome audit = cmd_audit(c.out);
  EXPECT_FALSE(audit.empty);
  EXPECT_TRUE(audit.passed) << audit.text;

  c.trace_masks = false;
  cmd_train(c);
  EXPECT_FALSE(fs::exists(fs::path(c.out) / "mask_trace.csv"));
  EXPECT_TRUE(cmd_audit(c.out).empty);
  fs::remove_all(c.out);
}

TEST(Audit, ZeroRateRunHasEmptyDropReport) {
  RunConfig c = tiny_config();
  c.model.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  c.out = scratch("audit_zero").string();
  cmd_train(c);
  const AuditOutcome a = cmd_audit(c.out);
  EXPECT_TRUE(a.passed) << a.text;
  EXPECT_EQ(a.report.drop_rate, 0.0);
  fs::remove_all(c.out);
}

TEST(Audit, DetectsTamperingAndPartViolations) {
  RunConfig c = tiny_config();
  c.model.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
  c.model.residual_regularizer.max_span = 4;
  c.model.residual_regularizer.part = reg::Part::encoder;
  c.out = scratch("audit_tamper").string();
  cmd_train(c);
  const fs::path trace_path = fs::path(c.out) / "mask_trace.csv";
  reg::MaskTrace trace;
  {
    std::ifstream in(trace_path);
    trace = reg::MaskTrace::read_csv(in);
  }
  ASSERT_FALSE(trace.empty());
  EXPECT_TRUE(cmd_audit(c.out).passed);

  reg::MaskTrace bad;
  for (auto rec : trace.records()) {
    if (rec.step == 3 && !rec.dropped.empty()) rec.norm_factor = 1.0;
    bad.append(rec);
  }
  {
    std::ofstream out(trace_path);
    bad.write_csv(out);
  }
  const AuditOutcome tampered = cmd_audit(c.out);
  EXPECT_FALSE(tampered.passed);
  EXPECT_NE(tampered.text.find("step 3"), std::string::npos) << tampered.text;

  reg::MaskTrace moved;
  for (auto rec : trace.records()) {
    rec.location.replace(0, 4, "dec.");
    moved.append(rec);
  }
  {
    std::ofstream out(trace_path);
    moved.write_csv(out);
  }
  const AuditOutcome violated = cmd_audit(c.out);
  EXPECT_FALSE(violated.passed);
  EXPECT_FALSE(violated.part_violations.empty());
  fs::remove_all(c.out);
}

TEST(Sweep, ZeroValueMatchesBaselineAndShape) {
  RunConfig base = tiny_config();
  base.optim.epochs = 1;
  base.model.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  const SweepResult zero = run_sweep(base, SweepAxis::p, {0.0}, {1});
  RunConfig none = tiny_config();
  none.optim.epochs = 1;
  const RunResult plain = train(none, data::generate_dataset(none.task));
  ASSERT_EQ(zero.rows.size(), 1u);
  EXPECT_EQ(zero.runs[0].dev_metric, plain.dev.metric);
  EXPECT_EQ(zero.runs[0].final_train_loss, plain.final_train_loss);

  const SweepResult five = run_sweep(base, SweepAxis::p, {0.01, 0.05, 0.1, 0.3, 0.6}, {1, 2});
  ASSERT_EQ(five.rows.size(), 5u);
  EXPECT_EQ(five.runs.size(), 10u);
  std::size_t marked = 0, argmax = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    marked += five.rows[i].best;
    if (five.rows[i].dev_median > five.rows[argmax].dev_median) argmax = i;
  }
  EXPECT_EQ(marked, 1u);
  EXPECT_EQ(five.best, argmax);
  EXPECT_TRUE(five.rows[argmax].best);

  const fs::path out = scratch("sweep");
  write_sweep(five, out);
  std::ifstream in(out / "sweep.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "axis,value,metric_name,dev_median,test_median,train_loss_median,best");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 5u);
  fs::remove_all(out);

  EXPECT_THROW(run_sweep(base, SweepAxis::p, {}, {1}), ConfigError);
  EXPECT_THROW(run_sweep(base, SweepAxis::p, {0.1}, {}), ConfigError);
}

TEST(Sweep, WerPicksMinimum) {
  RunConfig base = tiny_config();
  base.task.kind = data::TaskKind::toy_asr;
  base.task.noise = 0.1;
  base.optim.epochs = 1;
  base.model.residual_regularizer.kind = reg::ResidualKind::dropdim_span;
  base.sync_derived();
  const SweepResult r = run_sweep(base, SweepAxis::alpha, {1, 4, 8}, {1});
  EXPECT_EQ(r.metric_name, "wer");
  std::size_t argmin = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i)
    if (r.rows[i].dev_median < r.rows[argmin].dev_median) argmin = i;
  EXPECT_EQ(r.best, argmin);
}

TEST(DataSweep, FullFractionEqualsPlainTraining) {
  RunConfig base = tiny_config();
  base.optim.epochs = 1;
  base.model.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  base.model.residual_regularizer.rate = 0.1;
  const DataSweepResult r = run_data_sweep(base, {0.1, 0.25, 0.5, 1.0}, {1}, false);
  EXPECT_EQ(r.runs.size(), 8u);
  ASSERT_EQ(r.rows.size(), 4u);
  const auto data = data::generate_dataset(base.task);
  RunConfig none = base;
  none.model.residual_regularizer = reg::RegularizerSpec{};
  const RunResult plain_dd = train(base, data), plain_none = train(none, data);
  EXPECT_EQ(r.rows[3].dropdim_dev, plain_dd.dev.metric);
  EXPECT_EQ(r.rows[3].baseline_dev, plain_none.dev.metric);
  EXPECT_EQ(r.rows[3].dropdim_test, plain_dd.test.metric);
  for (const auto& run : r.runs)
    EXPECT_EQ(run.train_pairs, static_cast<std::size_t>(std::ceil(run.fraction * 32)));
  EXPECT_THROW(run_data_sweep(base, {0.0}, {1}, false), ParameterError);
  EXPECT_THROW(run_data_sweep(base, {1.2}, {1}, false), ParameterError);
  EXPECT_THROW(run_data_sweep(base, {0.5}, {1}, true), ConfigError);  // augment needs toy_asr
}

TEST(Train, CopyTwoHundredPairsConverges) {
  RunConfig c;
  c.task.kind = data::TaskKind::copy;
  c.task.min_len = 3;
  c.task.max_len = 8;
  c.task.train_size = 200;
  c.task.dev_size = c.task.test_size = 20;
  c.sync_derived();
  EXPECT_EQ(c.optim.epochs, 30u);
  const RunResult r = train(c, data::generate_dataset(c.task), {nullptr, false});
  EXPECT_LT(r.final_train_loss, 0.1);
}

TEST(Train, ExcessiveDropRateHurts) {
  RunConfig c;
  c.task.kind = data::TaskKind::copy;
  c.task.min_len = 3;
  c.task.max_len = 8;
  c.task.train_size = 300;
  c.task.dev_size = c.task.test_size = 30;
  c.optim.epochs = 10;
  c.model.residual_regularizer.kind = reg::ResidualKind::dropdim_random;
  c.sync_derived();
  const auto data = data::generate_dataset(c.task);
  c.model.residual_regularizer.rate = 0.05;
  const RunResult mild = train(c, data);
  c.model.residual_regularizer.rate = 0.95;
  const RunResult heavy = train(c, data);
  EXPECT_LT(heavy.dev.metric, mild.dev.metric);
}

// Shared converged copy model. 200 pairs fit the training set but generalize
// poorly (dev BLEU ~55); 1000 pairs for 15 epochs reach dev BLEU ~98.
class CopyModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new RunConfig();
    config_->task.kind = data::TaskKind::copy;
    config_->task.min_len = 3;
    config_->task.max_len = 8;
    config_->task.train_size = 1000;
    config_->task.dev_size = 50;
    config_->task.test_size = 50;
    config_->optim.epochs = 15;
    config_->sync_derived();
    data_ = new data::Dataset(data::generate_dataset(config_->task));
    result_ = new RunResult(train(*config_, *data_));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete data_;
    delete config_;
  }
  static RunConfig* config_;
  static data::Dataset* data_;
  static RunResult* result_;
};
RunConfig* CopyModel::config_ = nullptr;
data::Dataset* CopyModel::data_ = nullptr;
RunResult* CopyModel::result_ = nullptr;

TEST_F(CopyModel, Converged) {
  EXPECT_LT(result_->final_train_loss, 0.1);
  EXPECT_GT(result_->dev.metric, 90.0);
}

TEST_F(CopyModel, GreedyDecodeCopies) {
  // Ids 0-3 are reserved, so the content analog of [3,7,2] is [5,9,6].
  const std::vector<std::vector<int>> src{{5, 9, 6}}, tgt{{5, 9, 6, kEosId}};
  const auto batch = model::make_token_batch(src, tgt, {});
  const auto out = model::greedy_decode(*result_->model, batch, 10);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (std::vector<int>{5, 9, 6}));
}

TEST_F(CopyModel, TestTimeZeroRateIsCleanEvaluation) {
  const EvalResult clean = evaluate(*result_->model, data_->test, config_->task, 8, false);
  for (auto method : {reg::ResidualKind::dropout, reg::ResidualKind::dropdim_random}) {
    const auto rows = testtime_drop(*result_->model, data_->test, method, {0.0, 0.4}, 10, 1, 8);
    ASSERT_EQ(rows.size(), 2u);
    ASSERT_EQ(rows[0].accuracies.size(), 10u);
    for (double a : rows[0].accuracies) EXPECT_EQ(a, clean.token_accuracy);
    EXPECT_LT(rows[1].median, clean.token_accuracy);
  }
  EXPECT_THROW(testtime_drop(*result_->model, data_->test, reg::ResidualKind::dropout, {1.0}, 10, 1, 8),
               ParameterError);
  EXPECT_THROW(testtime_drop(*result_->model, data_->test, reg::ResidualKind::dropout, {-0.1}, 10, 1, 8),
               ParameterError);
  EXPECT_THROW(testtime_drop(*result_->model, data_->test, reg::ResidualKind::dropdim_span, {0.1}, 10, 1, 8),
               ConfigError);
}

TEST_F(CopyModel, AttentionMapsAreRowStochastic) {
  const auto maps = extract_attention(*result_->model, data_->test, 3);
  ASSERT_EQ(maps.size(), 2u);
  const std::size_t src_len = data_->test[3].source.size();
  const std::size_t tgt_len = data_->test[3].target.size();
  EXPECT_EQ(maps[0].name, "enc_self");
  EXPECT_EQ(maps[0].mean.shape(), (Shape{src_len, src_len}));
  EXPECT_EQ(maps[1].name, "cross");
  EXPECT_EQ(maps[1].mean.shape(), (Shape{tgt_len, src_len}));
  for (const auto& m : maps) {
    EXPECT_EQ(m.heads.size(), config_->model.heads);
    EXPECT_EQ(m.row_labels.size(), m.mean.dim(0));
    EXPECT_EQ(m.col_labels.size(), m.mean.dim(1));
    for (const Tensor* t : {&m.mean, &m.heads[0], &m.heads.back()})
      for (std::size_t r = 0; r < t->dim(0); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < t->dim(1); ++c) s += t->at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
  }
  EXPECT_THROW(extract_attention(*result_->model, data_->test, data_->test.size()), IndexError);

  const fs::path out = scratch("attention");
  write_attention(maps, out);
  std::ifstream in(out / "cross.mean.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.substr(0, 4), "row,");
  EXPECT_EQ(header.substr(header.size() - 8), ",entropy");
  std::size_t rows = 0;
  for (std::string l; std::getline(in, l);) ++rows;
  EXPECT_EQ(rows, tgt_len);
  EXPECT_TRUE(fs::exists(out / "enc_self.head0.csv"));
  fs::remove_all(out);
}

TEST(Attention, AsrShapesUseSubsampledFrames) {
  RunConfig c = tiny_config();
  c.task.kind = data::TaskKind::toy_asr;
  c.optim.epochs = 1;
  c.sync_derived();
  const auto data = data::generate_dataset(c.task);
  RunResult r = train(c, data, {nullptr, false});
  const auto maps = extract_attention(*r.model, data.dev, 0);
  const std::size_t frames = (data.dev[0].frames.dim(0) + 1) / 2;
  EXPECT_EQ(maps[0].mean.shape(), (Shape{frames, frames}));
  EXPECT_EQ(maps[1].mean.shape(), (Shape{data.dev[0].target.size(), frames}));
  EXPECT_EQ(maps[0].col_labels[0], "f0");
}

TEST(RowEntropy, Oracle) {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25}, peaked{1.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(row_entropy(uniform), std::log(4.0));
  EXPECT_EQ(row_entropy(peaked), 0.0);
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
}

}  // namespace
}  // namespace dropdim::harness
