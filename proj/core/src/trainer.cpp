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
#include "dropdim/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "dropdim/checkpoint.hpp"
#include "dropdim/errors.hpp"
#include "dropdim/metrics.hpp"
#include "dropdim/ops.hpp"
#include "dropdim/vocab.hpp"
#include "parse_util.hpp"

namespace dropdim::harness {
namespace {

using detail::fmt;

enum Stream : std::uint64_t { kInit = 1, kShuffle = 2, kRegularizer = 3 };

struct Counts {
  double loss_sum = 0.0;  // loss * tokens
  std::size_t tokens = 0;
  std::size_t correct = 0;

  void add(const model::Batch& batch, const Tensor& logits, double loss) {
    const std::size_t vocab = logits.dim(2);
    const auto& lv = logits.storage();
    std::size_t n = 0;
    for (std::size_t i = 0; i < batch.tgt_out.size(); ++i) {
      if (batch.tgt_out[i] == kPadId) continue;
      ++n;
      const double* row = lv.data() + i * vocab;
      const auto best = static_cast<int>(std::max_element(row, row + vocab) - row);
      if (best == batch.tgt_out[i]) ++correct;
    }
    tokens += n;
    loss_sum += loss * static_cast<double>(n);
  }
  double loss() const { return tokens ? loss_sum / static_cast<double>(tokens) : 0.0; }
  double accuracy() const {
    return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  }
};

std::vector<int> strip_eos(const std::vector<int>& t) {
  std::vector<int> out = t;
  if (!out.empty() && out.back() == kEosId) out.pop_back();
  return out;
}

std::size_t decode_limit(const data::TaskSpec& spec) { return spec.max_len + 2; }

}  // namespace

std::string task_metric_name(const data::TaskSpec& spec) {
  return spec.discrete() ? "bleu" : "wer";
}

bool metric_higher_is_better(const std::string& name) { return name != "wer"; }

model::Batch make_batch(const std::vector<data::ParallelPair>& pairs, std::size_t begin,
                        std::size_t end, const std::vector<std::size_t>* order) {
  std::vector<std::vector<int>> sources, targets;
  std::vector<Tensor> frames;
  std::vector<std::uint64_t> ids;
  bool continuous = false;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& p = pairs[order ? (*order)[i] : i];
    continuous = p.source.empty();
    if (continuous) frames.push_back(p.frames);
    else sources.push_back(p.source);
    targets.push_back(p.target);
    ids.push_back(p.id);
  }
  return continuous ? model::make_frame_batch(frames, targets, ids)
                    : model::make_token_batch(sources, targets, ids);
}

EvalResult evaluate(model::Transformer& model, const std::vector<data::ParallelPair>& pairs,
                    const data::TaskSpec& spec, std::size_t batch_size, bool decode) {
  EvalResult r;
  Counts counts;
  std::vector<std::vector<int>> hyps, refs;
  for (std::size_t b = 0; b < pairs.size(); b += batch_size) {
    const auto batch = make_batch(pairs, b, std::min(pairs.size(), b + batch_size));
    Tape tape;
    tape.set_grad_enabled(false);
    model::ForwardContext ctx;
    const Var logits = model.forward(tape, batch, ctx);
    const Var loss = cross_entropy_label_smoothed(logits, batch.tgt_out,
                                                  model.config().label_smoothing, kPadId);
    counts.add(batch, logits.value(), loss.value()[0]);
    if (decode) {
      for (auto& h : model::greedy_decode(model, batch, decode_limit(spec))) hyps.push_back(h);
      for (std::size_t i = b; i < b + batch.size; ++i) refs.push_back(strip_eos(pairs[i].target));
    }
  }
  r.loss = counts.loss();
  r.token_accuracy = counts.accuracy();
  r.metric_name = task_metric_name(spec);
  if (decode) {
    r.metric = spec.discrete() ? data::bleu(hyps, refs) : 100.0 * data::corpus_wer(hyps, refs);
  }
  return r;
}

double token_accuracy_with_regularizer(model::Transformer& model,
                                       const std::vector<data::ParallelPair>& pairs,
                                       const reg::RegularizerSpec& spec, Rng& rng,
                                       std::size_t batch_size) {
  Counts counts;
  for (std::size_t b = 0; b < pairs.size(); b += batch_size) {
    const auto batch = make_batch(pairs, b, std::min(pairs.size(), b + batch_size));
    Tape tape;
    tape.set_grad_enabled(false);
    model::ForwardContext ctx;
    ctx.mode = reg::Mode::train;
    ctx.rng = &rng;
    ctx.spec_override = &spec;
    ctx.example_ids = batch.example_ids;
    const Var logits = model.forward(tape, batch, ctx);
    counts.add(batch, logits.value(), 0.0);
  }
  return counts.accuracy();
}

RunResult train(const RunConfig& config_in, const data::Dataset& data,
                const TrainOptions& options) {
  RunConfig config = config_in;
  config.sync_derived();
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  RunResult result;
  result.config_hash = config.hash();
  const Rng root(mix_seed(config.seed));
  result.model.emplace(config.model, root.fork(kInit).next_u64());
  model::Transformer& model = *result.model;
  Rng shuffle = root.fork(kShuffle);
  Rng reg_rng = root.fork(kRegularizer);
  Adam adam(config.optim);

  const auto& train_pairs = options.train_pairs ? *options.train_pairs : data.train;
  if (train_pairs.empty()) throw ConfigError("training split is empty");
  const std::size_t bs = config.optim.batch_size;
  std::vector<std::size_t> order(train_pairs.size());
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.optim.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.uniform_int(i)]);
    }
    Counts counts;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const auto batch = make_batch(train_pairs, b, std::min(order.size(), b + bs), &order);
      Tape tape;
      model::ForwardContext ctx;
      ctx.mode = reg::Mode::train;
      ctx.rng = &reg_rng;
      ctx.trace = config.trace_masks ? &result.trace : nullptr;
      ctx.step = step;
      ctx.example_ids = batch.example_ids;
      const Var logits = model.forward(tape, batch, ctx);
      const Var loss = cross_entropy_label_smoothed(logits, batch.tgt_out,
                                                    config.model.label_smoothing, kPadId);
      counts.add(batch, logits.value(), loss.value()[0]);
      tape.backward(loss);
      adam.step(model.parameters());
      model.parameters().zero_grad();
      ++step;
    }
    result.records.push_back({epoch, "train", counts.loss(), "token_acc", counts.accuracy()});
    const EvalResult dev = evaluate(model, data.dev, config.task, bs, false);
    result.records.push_back({epoch, "dev", dev.loss, "token_acc", dev.token_accuracy});
    result.final_train_loss = counts.loss();
  }

  const std::size_t last = config.optim.epochs;
  result.dev = evaluate(model, data.dev, config.task, bs, options.decode);
  result.test = evaluate(model, data.test, config.task, bs, options.decode);
  if (options.decode) {
    result.records.push_back({last, "dev", result.dev.loss, result.dev.metric_name, result.dev.metric});
  }
  result.records.push_back({last, "test", result.test.loss, "token_acc", result.test.token_accuracy});
  if (options.decode) {
    result.records.push_back(
        {last, "test", result.test.loss, result.test.metric_name, result.test.metric});
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

RunResult cmd_train(const RunConfig& config_in) {
  RunConfig config = config_in;
  config.sync_derived();
  config.validate();
  const data::Dataset data = data::generate_dataset(config.task);
  RunResult result = train(config, data);

  const std::filesystem::path dir(config.out);
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.txt");
    cfg << config.to_text();
  }
  write_record_csv(result.records, dir / "record.csv");
  model::save_checkpoint(*result.model, dir / "model.ckpt");
  const auto trace_path = dir / "mask_trace.csv";
  if (config.trace_masks) {
    std::ofstream trace(trace_path);
    result.trace.write_csv(trace);
  } else {
    std::filesystem::remove(trace_path);
  }
  std::ofstream meta(dir / "meta.txt");
  meta << "config_hash=" << result.config_hash << "\n"
       << "wall_seconds=" << fmt(result.wall_seconds) << "\n"
       << "mask_records=" << result.trace.size() << "\n";
  return result;
}

void write_record_csv(const std::vector<EpochRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "epoch,split,loss,metric_name,metric_value\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.split << ',' << fmt(r.loss) << ',' << r.metric_name << ','
        << fmt(r.metric_value) << '\n';
  }
}

std::vector<EpochRecord> read_record_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "epoch,split,loss,metric_name,metric_value") {
    throw FormatError("unexpected record header '" + line + "'");
  }
  std::vector<EpochRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string epoch, split, loss, name, value;
    if (!std::getline(ss, epoch, ',') || !std::getline(ss, split, ',') ||
        !std::getline(ss, loss, ',') || !std::getline(ss, name, ',') ||
        !std::getline(ss, value)) {
      throw FormatError("malformed record line '" + line + "'");
    }
    records.push_back({std::stoul(epoch), split, std::stod(loss), name, std::stod(value)});
  }
  return records;
}

}  // namespace dropdim::harness
