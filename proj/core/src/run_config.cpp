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
#include "dropdim/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dropdim/errors.hpp"
#include "parse_util.hpp"

namespace dropdim::harness {
namespace {

using detail::fmt;
using detail::parse_bool;
using detail::parse_real;
using detail::parse_size;

constexpr std::string_view kDerivedKeys[] = {"model.src_vocab", "model.tgt_vocab",
                                             "model.feature_dim"};

}  // namespace

void RunConfig::sync_derived() {
  model.tgt_vocab = task.vocab_size;
  if (task.discrete()) {
    model.src_vocab = task.vocab_size;
    model.feature_dim = 0;
  } else {
    model.src_vocab = task.vocab_size;
    model.feature_dim = task.feature_dim;
  }
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  RunConfig synced = *this;
  synced.sync_derived();
  if (synced.model.tgt_vocab != model.tgt_vocab || synced.model.src_vocab != model.src_vocab) {
    throw ConfigError("model.src_vocab/model.tgt_vocab must equal task.vocab");
  }
  if (synced.model.feature_dim != model.feature_dim) {
    throw ConfigError("model.feature_dim must equal task.feature_dim for toy_asr and 0 otherwise");
  }
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (optim.warmup == 0) throw ConfigError("optim.warmup must be >= 1");
  if (optim.epochs == 0) throw ConfigError("optim.epochs must be >= 1");
  if (optim.batch_size == 0) throw ConfigError("optim.batch_size must be >= 1");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ConfigError("optim.beta1 must lie in [0,1)");
  if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ConfigError("optim.beta2 must lie in [0,1)");
  if (!(optim.eps > 0.0)) throw ConfigError("optim.eps must be > 0");
  const std::size_t longest = std::max(task.max_len + 1, task.max_len * task.max_frames);
  if (longest > model.max_seq_len) {
    throw ConfigError("model.max_seq_len=" + std::to_string(model.max_seq_len) +
                      " is shorter than the longest task sequence (" + std::to_string(longest) +
                      ")");
  }
  if (out.empty()) throw ConfigError("out must not be empty");
}

std::vector<std::pair<std::string, std::string>> RunConfig::fields() const {
  auto all = task.fields();
  for (auto& kv : model.fields()) all.push_back(std::move(kv));
  all.emplace_back("optim.lr", fmt(optim.lr));
  all.emplace_back("optim.warmup", std::to_string(optim.warmup));
  all.emplace_back("optim.epochs", std::to_string(optim.epochs));
  all.emplace_back("optim.batch_size", std::to_string(optim.batch_size));
  all.emplace_back("optim.beta1", fmt(optim.beta1));
  all.emplace_back("optim.beta2", fmt(optim.beta2));
  all.emplace_back("optim.eps", fmt(optim.eps));
  all.emplace_back("seed", std::to_string(seed));
  all.emplace_back("out", out);
  all.emplace_back("trace_masks", trace_masks ? "true" : "false");
  return all;
}

std::string RunConfig::to_text() const {
  std::string text;
  for (const auto& [k, v] : fields()) text += k + "=" + v + "\n";
  return text;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  if (task.set(key, value) || model.set(key, value)) return;
  if (key == "optim.lr") optim.lr = parse_real(key, value);
  else if (key == "optim.warmup") optim.warmup = parse_size(key, value);
  else if (key == "optim.epochs") optim.epochs = parse_size(key, value);
  else if (key == "optim.batch_size") optim.batch_size = parse_size(key, value);
  else if (key == "optim.beta1") optim.beta1 = parse_real(key, value);
  else if (key == "optim.beta2") optim.beta2 = parse_real(key, value);
  else if (key == "optim.eps") optim.eps = parse_real(key, value);
  else if (key == "seed") seed = parse_size(key, value);
  else if (key == "out") out = std::string(value);
  else if (key == "trace_masks") trace_masks = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig c;
  std::map<std::string, std::string, std::less<>> derived;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(std::begin(kDerivedKeys), std::end(kDerivedKeys), key) != std::end(kDerivedKeys)) {
      derived[key] = value;
      continue;
    }
    c.set(key, value);
  }
  c.sync_derived();
  for (const auto& [key, value] : derived) {
    for (const auto& [k, v] : c.model.fields()) {
      if (k == key && parse_size(key, value) != parse_size(k, v)) {
        throw ConfigError(key + "=" + value + " contradicts the task (expected " + v + ")");
      }
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double Adam::current_lr() const {
  const double t = static_cast<double>(std::max<std::uint64_t>(t_, 1));
  const double w = static_cast<double>(config_.warmup);
  return config_.lr * std::min(t / w, std::sqrt(w / t));
}

void Adam::step(model::ParameterStore& params) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& [name, p] : entries) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  ++t_;
  const double lr = current_lr();
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].second;
    if (!p.has_grad()) continue;
    auto w = p.values();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

}  // namespace dropdim::harness
