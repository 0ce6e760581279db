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

#include "popcal/checkpoint.h"

#include <algorithm>
#include <stdexcept>

#include "popcal/io.h"

namespace popcal {

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(ckpt.kind);
  w.str(ckpt.meta.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) w.i64(d);
    w.f64s(t.values().data(), t.values().size());
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.kind = r.str();
  try {
    c.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    if (rank > 8) r.fail("checkpoint: implausible rank for '" + name + "'");
    Dims dims(rank);
    for (auto& d : dims) {
      d = r.i64();
      if (d < 0 || d > (std::int64_t{1} << 32)) r.fail("checkpoint: bad dimension for '" + name + "'");
    }
    const auto n = static_cast<std::size_t>(element_count(dims));
    if (n * 8 > bytes.size()) r.fail("checkpoint: tensor '" + name + "' larger than input");
    std::vector<double> v(n);
    r.f64s(v.data(), n);
    c.tensors.push_back({std::move(name), Tensor(std::move(dims), std::move(v))});
  }
  if (!r.at_end()) r.fail("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string tensors_hash(const ParamList& tensors) {
  Sha256 h;
  ByteWriter w;
  for (const auto& [name, t] : tensors) {
    w.clear();
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) w.i64(d);
    w.f64s(t.values().data(), t.values().size());
    h.update(w.bytes());
  }
  return h.hex_digest();
}

void assign_tensors(const Checkpoint& src, const ParamList& dst) {
  for (const auto& [name, t] : dst) {
    const Tensor* found = nullptr;
    for (const auto& s : src.tensors) {
      if (s.name == name) found = &s.tensor;
    }
    if (!found) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (found->dims() != t.dims()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                        dims_string(found->dims()) + ", expected " + dims_string(t.dims()));
    }
    Tensor target = t;
    std::ranges::copy(found->values(), target.mutable_values().begin());
  }
}

}  // namespace popcal
