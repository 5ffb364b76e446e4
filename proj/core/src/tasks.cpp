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
#include "dropdim/tasks.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dropdim/errors.hpp"
#include "dropdim/rng.hpp"
#include "dropdim/vocab.hpp"
#include "parse_util.hpp"

namespace dropdim::data {
namespace {

using detail::fmt;
using detail::parse_real;
using detail::parse_size;

enum Stream : std::uint64_t { kDictionary = 1, kCodebook = 2, kSequences = 3, kNoise = 4, kSubsample = 5 };

std::size_t content_count(const TaskSpec& spec) { return spec.vocab_size - kNumReservedTokens; }

int random_content(Rng& rng, const TaskSpec& spec) {
  return kNumReservedTokens + static_cast<int>(rng.uniform_int(content_count(spec)));
}

// Number of distinct sequences with lengths in [min_len, max_len], saturated.
double sequence_space(const TaskSpec& spec) {
  double total = 0.0;
  for (std::size_t len = spec.min_len; len <= spec.max_len; ++len) {
    total += std::pow(static_cast<double>(content_count(spec)), static_cast<double>(len));
    if (total > 1e18) break;
  }
  return total;
}

std::vector<Tensor> make_codebook(const TaskSpec& spec, Rng rng) {
  std::vector<Tensor> codebook;
  for (std::size_t v = 0; v < spec.vocab_size; ++v) {
    Tensor proto(Shape{spec.feature_dim});
    for (double& x : proto.values()) x = rng.normal();
    codebook.push_back(std::move(proto));
  }
  return codebook;
}

Tensor render_frames(const std::vector<int>& tokens, const std::vector<Tensor>& codebook,
                     const TaskSpec& spec, Rng& rng) {
  std::vector<double> values;
  std::size_t frames = 0;
  for (int tok : tokens) {
    const std::size_t k =
        spec.min_frames + rng.uniform_int(spec.max_frames - spec.min_frames + 1);
    for (std::size_t f = 0; f < k; ++f) {
      for (double x : codebook[static_cast<std::size_t>(tok)].values()) {
        values.push_back(x + spec.noise * rng.normal());
      }
      ++frames;
    }
  }
  return Tensor(Shape{frames, spec.feature_dim}, std::move(values));
}

std::vector<int> strip_eos(const std::vector<int>& target) {
  std::vector<int> out = target;
  if (!out.empty() && out.back() == kEosId) out.pop_back();
  return out;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(ids[i]);
  }
  return s;
}

std::vector<int> split_ids(const std::string& text) {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw FormatError("invalid token id '" + tok + "'");
    }
    ids.push_back(v);
  }
  return ids;
}

constexpr const char* kSplits[] = {"train", "dev", "test"};

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::toy_mt: return "toy_mt";
    case TaskKind::toy_asr: return "toy_asr";
  }
  return "copy";
}

TaskKind parse_task_kind(std::string_view s) {
  std::string t(s);
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "copy") return TaskKind::copy;
  if (t == "reverse") return TaskKind::reverse;
  if (t == "toy_mt") return TaskKind::toy_mt;
  if (t == "toy_asr") return TaskKind::toy_asr;
  throw ConfigError("task.kind: unknown task '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
  if (vocab_size < static_cast<std::size_t>(kNumReservedTokens) + 1) {
    throw ConfigError("task.vocab: must be >= 5 (ids 0-3 are pad, bos, eos, unk), got " +
                      std::to_string(vocab_size));
  }
  if (min_len == 0) throw ConfigError("task.min_len must be >= 1");
  if (max_len < min_len) throw ConfigError("task.max_len must be >= task.min_len");
  if (train_size == 0) throw ConfigError("task.train_size must be > 0");
  if (dev_size == 0) throw ConfigError("task.dev_size must be > 0");
  if (test_size == 0) throw ConfigError("task.test_size must be > 0");
  if (kind == TaskKind::toy_asr) {
    if (!(noise >= 0.0)) throw ConfigError("task.noise must be >= 0");
    if (min_frames == 0 || max_frames < min_frames) {
      throw ConfigError("task.min_frames/max_frames must satisfy 1 <= min <= max");
    }
    if (feature_dim == 0) throw ConfigError("task.feature_dim must be >= 1");
  } else if (!(noise >= 0.0 && noise < 1.0)) {
    throw ConfigError("task.noise: label-noise probability must lie in [0,1)");
  }
  if (sequence_space(*this) < static_cast<double>(train_size + dev_size + test_size)) {
    throw ConfigError("task.vocab/min_len/max_len: too few distinct sequences for the splits");
  }
}

bool TaskSpec::set(std::string_view key, std::string_view value) {
  if (key == "task.kind") kind = parse_task_kind(value);
  else if (key == "task.vocab") vocab_size = parse_size(key, value);
  else if (key == "task.min_len") min_len = parse_size(key, value);
  else if (key == "task.max_len") max_len = parse_size(key, value);
  else if (key == "task.noise") noise = parse_real(key, value);
  else if (key == "task.min_frames") min_frames = parse_size(key, value);
  else if (key == "task.max_frames") max_frames = parse_size(key, value);
  else if (key == "task.feature_dim") feature_dim = parse_size(key, value);
  else if (key == "task.train_size") train_size = parse_size(key, value);
  else if (key == "task.dev_size") dev_size = parse_size(key, value);
  else if (key == "task.test_size") test_size = parse_size(key, value);
  else if (key == "task.seed") seed = parse_size(key, value);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> TaskSpec::fields() const {
  return {
      {"task.kind", std::string(to_string(kind))},
      {"task.vocab", std::to_string(vocab_size)},
      {"task.min_len", std::to_string(min_len)},
      {"task.max_len", std::to_string(max_len)},
      {"task.noise", fmt(noise)},
      {"task.min_frames", std::to_string(min_frames)},
      {"task.max_frames", std::to_string(max_frames)},
      {"task.feature_dim", std::to_string(feature_dim)},
      {"task.train_size", std::to_string(train_size)},
      {"task.dev_size", std::to_string(dev_size)},
      {"task.test_size", std::to_string(test_size)},
      {"task.seed", std::to_string(seed)},
  };
}

const std::vector<ParallelPair>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (train|dev|test)");
}

ToyMtDictionary::ToyMtDictionary(std::size_t vocab_size, std::uint64_t seed)
    : forward_(vocab_size), backward_(vocab_size) {
  for (std::size_t i = 0; i < vocab_size; ++i) forward_[i] = static_cast<int>(i);
  // Reserved ids map to themselves; content ids are shuffled (Fisher-Yates).
  Rng rng(seed);
  for (std::size_t i = vocab_size; i > static_cast<std::size_t>(kNumReservedTokens) + 1; --i) {
    const std::size_t lo = kNumReservedTokens;
    const std::size_t j = lo + rng.uniform_int(i - lo);
    std::swap(forward_[i - 1], forward_[j]);
  }
  for (std::size_t i = 0; i < vocab_size; ++i) {
    backward_[static_cast<std::size_t>(forward_[i])] = static_cast<int>(i);
  }
}

int ToyMtDictionary::encode(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= forward_.size()) {
    throw IndexError("toy_mt: token " + std::to_string(token) + " outside vocabulary");
  }
  return forward_[static_cast<std::size_t>(token)];
}

int ToyMtDictionary::decode(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= backward_.size()) {
    throw IndexError("toy_mt: token " + std::to_string(token) + " outside vocabulary");
  }
  return backward_[static_cast<std::size_t>(token)];
}

std::vector<int> toy_mt_translate(const std::vector<int>& source, const ToyMtDictionary& dict) {
  std::vector<int> out;
  out.reserve(source.size());
  for (int tok : source) out.push_back(dict.encode(tok));
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  return out;
}

Dataset generate_dataset(const TaskSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  const Rng root(mix_seed(spec.seed));
  const ToyMtDictionary dict(spec.vocab_size, root.fork(kDictionary).next_u64());
  std::vector<Tensor> codebook;
  if (spec.kind == TaskKind::toy_asr) codebook = make_codebook(spec, root.fork(kCodebook));
  Rng seq_rng = root.fork(kSequences);
  Rng noise_rng = root.fork(kNoise);

  std::set<std::vector<int>> seen;
  std::uint64_t next_id = 0;
  for (auto* split : {&data.train, &data.dev, &data.test}) {
    const std::size_t n =
        split == &data.train ? spec.train_size : split == &data.dev ? spec.dev_size : spec.test_size;
    const bool is_train = split == &data.train;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> seq;
      do {
        const std::size_t len =
            spec.min_len + seq_rng.uniform_int(spec.max_len - spec.min_len + 1);
        seq.assign(len, 0);
        for (int& tok : seq) tok = random_content(seq_rng, spec);
      } while (!seen.insert(seq).second);

      ParallelPair pair;
      pair.id = next_id++;
      switch (spec.kind) {
        case TaskKind::copy:
          pair.source = seq;
          pair.target = seq;
          break;
        case TaskKind::reverse:
          pair.source = seq;
          pair.target.assign(seq.rbegin(), seq.rend());
          break;
        case TaskKind::toy_mt:
          pair.source = seq;
          pair.target = toy_mt_translate(seq, dict);
          break;
        case TaskKind::toy_asr:
          pair.target = seq;
          pair.frames = render_frames(seq, codebook, spec, seq_rng);
          break;
      }
      if (is_train && spec.discrete() && spec.noise > 0.0) {
        for (int& tok : pair.target) {
          if (noise_rng.bernoulli(spec.noise)) tok = random_content(noise_rng, spec);
        }
      }
      pair.target.push_back(kEosId);
      split->push_back(std::move(pair));
    }
  }
  return data;
}

std::vector<ParallelPair> subsample_train(const Dataset& data, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ParameterError("training fraction must lie in (0,1], got " + std::to_string(fraction));
  }
  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(mix_seed(data.spec.seed)).fork(kSubsample);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  std::vector<ParallelPair> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(data.train[i]);
  return out;
}

std::vector<ParallelPair> augment_asr(const std::vector<ParallelPair>& pairs, const TaskSpec& spec,
                                      std::uint64_t seed) {
  if (spec.kind != TaskKind::toy_asr) {
    throw ConfigError("augmentation is only defined for task.kind=toy_asr");
  }
  const std::vector<Tensor> codebook = make_codebook(spec, Rng(mix_seed(spec.seed)).fork(kCodebook));
  Rng rng(mix_seed(seed));
  std::vector<ParallelPair> out;
  out.reserve(pairs.size());
  for (const ParallelPair& p : pairs) {
    ParallelPair q = p;
    q.frames = render_frames(strip_eos(p.target), codebook, spec, rng);
    out.push_back(std::move(q));
  }
  return out;
}

void export_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const char* name : kSplits) {
    const auto& pairs = data.split(name);
    std::ofstream tsv(dir / (std::string(name) + ".tsv"));
    if (!tsv) throw FormatError("cannot write dataset split '" + std::string(name) + "'");
    for (const auto& p : pairs) tsv << join_ids(p.source) << '\t' << join_ids(p.target) << '\n';
    if (data.spec.discrete()) continue;
    std::ofstream bin(dir / (std::string(name) + ".frames.bin"), std::ios::binary);
    std::ofstream idx(dir / (std::string(name) + ".frames.idx"));
    idx << "# feature_dim=" << data.spec.feature_dim << '\n';
    std::uint64_t offset = 0;
    for (const auto& p : pairs) {
      idx << p.id << ' ' << offset << ' ' << p.frames.dim(0) << '\n';
      for (double v : p.frames.values()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        bin.write(bytes, 8);
      }
      offset += p.frames.dim(0);
    }
  }
}

Dataset import_dataset(const TaskSpec& spec, const std::filesystem::path& dir) {
  Dataset data;
  data.spec = spec;
  std::uint64_t next_id = 0;
  for (const char* name : kSplits) {
    auto& pairs = std::string_view(name) == "train" ? data.train
                  : std::string_view(name) == "dev" ? data.dev
                                                    : data.test;
    std::ifstream tsv(dir / (std::string(name) + ".tsv"));
    if (!tsv) throw FormatError("missing dataset split '" + std::string(name) + "'");
    std::string line;
    while (std::getline(tsv, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw FormatError("dataset line without TAB: '" + line + "'");
      ParallelPair p;
      p.id = next_id++;
      p.source = split_ids(line.substr(0, tab));
      p.target = split_ids(line.substr(tab + 1));
      pairs.push_back(std::move(p));
    }
    if (spec.discrete()) continue;
    std::ifstream idx(dir / (std::string(name) + ".frames.idx"));
    std::ifstream bin(dir / (std::string(name) + ".frames.bin"), std::ios::binary);
    if (!idx || !bin) throw FormatError("missing frame files for split '" + std::string(name) + "'");
    std::getline(idx, line);  // feature_dim header
    const std::size_t feat = spec.feature_dim;
    for (auto& p : pairs) {
      std::uint64_t id = 0, offset = 0, count = 0;
      if (!(idx >> id >> offset >> count)) throw FormatError("frame index truncated");
      p.id = id;
      bin.seekg(static_cast<std::streamoff>(offset * feat * 8));
      std::vector<double> values(count * feat);
      for (double& v : values) {
        unsigned char bytes[8];
        bin.read(reinterpret_cast<char*>(bytes), 8);
        if (!bin) throw FormatError("frame file truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        v = std::bit_cast<double>(bits);
      }
      p.frames = Tensor(Shape{count, feat}, std::move(values));
    }
  }
  return data;
}

}  // namespace dropdim::data
