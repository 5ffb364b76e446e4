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
// dropdim-lab: train, evaluate and analyse toy DropDim transformers.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dropdim/errors.hpp"
#include "dropdim/experiments.hpp"
#include "dropdim/run_config.hpp"
#include "dropdim/trainer.hpp"

namespace {

using namespace dropdim;
using harness::RunConfig;

// Flags shared by the verbs that build a RunConfig.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string preset = "toy";
  std::optional<std::string> reg;
  std::optional<double> p;
  std::optional<std::size_t> alpha;
  std::optional<std::string> part;
  std::optional<double> label_smoothing;
  std::optional<std::string> attn_reg;
  std::optional<double> attn_rate;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value run configuration file");
    app->add_option("--seed", seed, "run seed (model init, shuffling, masks)");
    app->add_option("--out", out, "output directory");
    app->add_option("--preset", preset, "model preset applied before the config file")
        ->check(CLI::IsMember({"toy", "paper-shape"}));
    app->add_option("--reg", reg, "none | dropout | dropdim-random | dropdim-span");
    app->add_option("--p", p, "drop rate");
    app->add_option("--alpha", alpha, "maximum span length (dropdim-span)");
    app->add_option("--part", part, "encoder | decoder | all");
    app->add_option("--label-smoothing", label_smoothing, "label smoothing epsilon");
    app->add_option("--attn-reg", attn_reg, "none | dropattention | drophead");
    app->add_option("--attn-rate", attn_rate, "attention regularizer rate");
    app->add_option("--set", overrides, "extra key=value overrides (repeatable)");
  }

  RunConfig build() const {
    RunConfig c;
    if (preset == "paper-shape") c.model = model::ModelConfig::paper_shape();
    if (!config_file.empty()) {
      const RunConfig file = RunConfig::load(config_file);
      if (preset == "paper-shape") {
        // The preset fixes the model shape; the file supplies everything else.
        for (const auto& [k, v] : file.fields()) {
          if (k.rfind("model.", 0) != 0) c.set(k, v);
        }
      } else {
        c = file;
      }
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    auto& r = c.model.residual_regularizer;
    if (seed) c.seed = *seed;
    if (out) c.out = *out;
    if (reg) r.kind = reg::parse_residual_kind(*reg);
    if (p) r.rate = *p;
    if (alpha) r.max_span = *alpha;
    if (part) r.part = reg::parse_part(*part);
    if (label_smoothing) c.model.label_smoothing = *label_smoothing;
    if (attn_reg) r.attention_kind = reg::parse_attention_kind(*attn_reg);
    if (attn_rate) r.attention_rate = *attn_rate;
    c.sync_derived();
    c.validate();
    return c;
  }
};

void print_eval(const std::string& split, const harness::EvalResult& r) {
  std::printf("split,loss,token_acc,metric_name,metric_value\n%s,%.6f,%.6f,%s,%.4f\n",
              split.c_str(), r.loss, r.token_accuracy, r.metric_name.c_str(), r.metric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dropdim-lab: structured-dropout experiments on toy sequence tasks"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train one model and write a run directory");
  train_flags.attach(train);

  std::string run_dir, split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a run's checkpoint");
  eval->add_option("--run", run_dir, "run directory")->required();
  eval->add_option("--split", split, "train | dev | test");

  ConfigFlags sweep_flags;
  std::string axis = "p";
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{1};
  auto* sweep = app.add_subcommand("sweep", "grid over p or alpha");
  sweep_flags.attach(sweep);
  sweep->add_option("--axis", axis, "p | alpha");
  sweep->add_option("--values", values, "sweep values")->required()->delimiter(',');
  sweep->add_option("--seeds", seeds, "run seeds")->delimiter(',');

  ConfigFlags data_flags;
  std::vector<double> fractions;
  std::vector<std::uint64_t> data_seeds{1};
  bool augment = false;
  auto* data_sweep = app.add_subcommand("data-sweep", "training-set fractions with/without DropDim");
  data_flags.attach(data_sweep);
  data_sweep->add_option("--fractions", fractions, "fractions in (0,1]")->required()->delimiter(',');
  data_sweep->add_option("--seeds", data_seeds, "run seeds")->delimiter(',');
  data_sweep->add_flag("--augment", augment, "also train with re-rendered toy_asr audio");

  std::string method = "dropdim-random", curve_out;
  std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::size_t mask_seeds = 10;
  std::uint64_t mask_seed = 1;
  auto* testtime = app.add_subcommand("testtime-drop", "force a regularizer on at inference");
  testtime->add_option("--run", run_dir, "run directory")->required();
  testtime->add_option("--method", method, "dropout | dropdim-random");
  testtime->add_option("--rates", rates, "drop rates in [0,1)")->delimiter(',');
  testtime->add_option("--mask-seeds", mask_seeds, "mask seeds per rate (>= 10 recommended)");
  testtime->add_option("--seed", mask_seed, "base mask seed");
  testtime->add_option("--split", split, "train | dev | test");
  testtime->add_option("--out", curve_out, "curve CSV (default <run>/testtime_<method>.csv)");

  std::size_t example = 0;
  std::string attn_out;
  auto* export_attn = app.add_subcommand("export-attention", "dump attention maps of one example");
  export_attn->add_option("--run", run_dir, "run directory")->required();
  export_attn->add_option("--example", example, "example index within the split");
  export_attn->add_option("--split", split, "train | dev | test");
  export_attn->add_option("--out", attn_out, "output directory (default <run>/attention)");

  double significance = 0.01;
  auto* audit = app.add_subcommand("audit", "check a run's mask trace");
  audit->add_option("--run", run_dir, "run directory")->required();
  audit->add_option("--significance", significance, "test level");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const RunConfig config = train_flags.build();
      const auto result = harness::cmd_train(config);
      std::printf("run %s written to %s (%.1f s)\n", result.config_hash.c_str(),
                  config.out.c_str(), result.wall_seconds);
      std::printf("final train loss %.6f\n", result.final_train_loss);
      print_eval("dev", result.dev);
      print_eval("test", result.test);
    } else if (eval->parsed()) {
      print_eval(split, harness::cmd_eval(run_dir, split));
    } else if (sweep->parsed()) {
      const RunConfig config = sweep_flags.build();
      const auto result = harness::run_sweep(config, harness::parse_sweep_axis(axis), values, seeds);
      harness::write_sweep(result, config.out);
      for (const auto& row : result.rows) {
        std::printf("%s=%g dev %s %.4f test %.4f%s\n", axis.c_str(), row.value,
                    result.metric_name.c_str(), row.dev_median, row.test_median,
                    row.best ? "  <- best" : "");
      }
    } else if (data_sweep->parsed()) {
      const RunConfig config = data_flags.build();
      const auto result = harness::run_data_sweep(config, fractions, data_seeds, augment);
      harness::write_data_sweep(result, config.out);
      for (const auto& row : result.rows) {
        std::printf("fraction %g%s: baseline %.4f dropdim %.4f (dev %s)\n", row.fraction,
                    row.augmented ? " +aug" : "", row.baseline_dev, row.dropdim_dev,
                    result.metric_name.c_str());
      }
    } else if (testtime->parsed()) {
      auto run = harness::load_run(run_dir);
      const auto kind = reg::parse_residual_kind(method);
      const auto rows = harness::testtime_drop(run.model, run.data.split(split), kind, rates,
                                               mask_seeds, mask_seed, run.config.optim.batch_size);
      const std::string path =
          curve_out.empty() ? run_dir + "/testtime_" + std::string(reg::to_string(kind)) + ".csv"
                            : curve_out;
      harness::write_testtime(rows, kind, path);
      for (const auto& r : rows) std::printf("rate %.3f token_acc median %.4f\n", r.rate, r.median);
    } else if (export_attn->parsed()) {
      auto run = harness::load_run(run_dir);
      const auto maps = harness::extract_attention(run.model, run.data.split(split), example);
      const std::string dir = attn_out.empty() ? run_dir + "/attention" : attn_out;
      harness::write_attention(maps, dir);
      std::printf("attention maps written to %s\n", dir.c_str());
    } else if (audit->parsed()) {
      const auto outcome = harness::cmd_audit(run_dir, significance);
      std::cout << outcome.text;
      return outcome.passed ? 0 : 3;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
