// Copyright 2026 The popcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef POPCAL_CHECKPOINT_H_
#define POPCAL_CHECKPOINT_H_

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "popcal/tensor.h"

namespace popcal {

inline constexpr std::string_view kCheckpointMagic{"PCCKPT\0\x01", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned container: a kind tag, JSON metadata and named f64 tensors.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  ParamList tensors;

  // Throws std::out_of_range when absent.
  const Tensor& get(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on malformed input.
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 over names, shapes and values, in order.
std::string tensors_hash(const ParamList& tensors);

// Copies values of `src` into same-named, same-shaped tensors of `dst`.
// Throws FormatError on any mismatch.
void assign_tensors(const Checkpoint& src, const ParamList& dst);

}  // namespace popcal

#endif  // POPCAL_CHECKPOINT_H_
