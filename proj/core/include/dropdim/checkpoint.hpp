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

#include <filesystem>
#include <iosfwd>

#include "dropdim/transformer.hpp"

// Binary checkpoint:
//   "DDIM1"
//   u64 length, config text (ModelConfig::to_text)
//   u64 parameter count, then per parameter:
//     u32 name length, name, u32 rank, rank x u64 dims,
//     numel x f64 values
// All integers and floats little-endian.
namespace dropdim::model {

void save_checkpoint(const Transformer& model, std::ostream& out);
void save_checkpoint(const Transformer& model, const std::filesystem::path& path);
Transformer load_checkpoint(std::istream& in);
Transformer load_checkpoint(const std::filesystem::path& path);

}  // namespace dropdim::model
