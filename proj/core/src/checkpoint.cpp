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
#include "dropdim/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dropdim/errors.hpp"

namespace dropdim::model {
namespace {

constexpr std::array<char, 5> kMagic = {'D', 'D', 'I', 'M', '1'};
constexpr std::uint64_t kMaxTextBytes = 1u << 20;

template <typename U>
void write_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

std::string read_bytes(std::istream& in, std::uint64_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const Transformer& model, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  const std::string text = model.config().to_text();
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& entries = model.parameters().entries();
  write_le<std::uint64_t>(out, entries.size());
  for (const auto& [name, tensor] : entries) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape().dims()) write_le<std::uint64_t>(out, d);
    for (double v : tensor.values()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw FormatError("failed to write checkpoint");
}

void save_checkpoint(const Transformer& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  save_checkpoint(model, out);
}

Transformer load_checkpoint(std::istream& in) {
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a DDIM1 checkpoint");
  const auto text_len = read_le<std::uint64_t>(in);
  if (text_len > kMaxTextBytes) throw FormatError("checkpoint config section too large");
  ModelConfig config = ModelConfig::from_text(read_bytes(in, text_len));
  const auto count = read_le<std::uint64_t>(in);
  ParameterStore params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_le<std::uint32_t>(in);
    std::string name = read_bytes(in, name_len);
    const auto rank = read_le<std::uint32_t>(in);
    if (rank == 0 || rank > 3) throw FormatError("parameter '" + name + "' has invalid rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(read_le<std::uint64_t>(in));
    Shape shape(dims);
    std::vector<double> values(shape.numel());
    for (double& v : values) v = std::bit_cast<double>(read_le<std::uint64_t>(in));
    params.add(std::move(name), Tensor(shape, std::move(values)));
  }
  return Transformer(std::move(config), std::move(params));
}

Transformer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  return load_checkpoint(in);
}

}  // namespace dropdim::model
