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

#include "popcal/worldgen.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "popcal/io.h"

namespace popcal {

Rgb color_rgb(Color c) {
  switch (c) {
    case Color::kRed: return {1.0, 0.0, 0.0};
    case Color::kBlue: return {0.0, 0.0, 1.0};
    case Color::kGreen: return {0.0, 1.0, 0.0};
    case Color::kYellow: return {1.0, 1.0, 0.0};
    case Color::kWhite: return {1.0, 1.0, 1.0};
    case Color::kGray: return {0.5, 0.5, 0.5};
  }
  throw std::invalid_argument("color_rgb: unknown color");
}

std::array<double, 2> half_extents(const SceneSpec& spec) {
  switch (spec.shape) {
    case ShapeKind::kRectangle:
    case ShapeKind::kEllipse:
      return {spec.size, spec.size / 2.0};
    default:
      return {spec.size, spec.size};
  }
}

bool spec_in_bounds(const SceneSpec& spec) {
  if (static_cast<int>(spec.shape) > 4 || static_cast<int>(spec.color) > 5) return false;
  if (!(spec.size >= kMinSize && spec.size <= kMaxSize)) return false;
  const auto [hw, hh] = half_extents(spec);
  return spec.x - hw >= 0.0 && spec.x + hw <= 1.0 && spec.y - hh >= 0.0 &&
         spec.y + hh <= 1.0;
}

namespace {

bool covers(const SceneSpec& s, double px, double py) {
  const double dx = px - s.x;
  const double dy = py - s.y;
  const double r = s.size;
  switch (s.shape) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::kRectangle:
      return std::abs(dx) <= r && std::abs(dy) <= r / 2.0;
    case ShapeKind::kEllipse: {
      const double h = r / 2.0;
      return dx * dx * (h * h) + dy * dy * (r * r) <= r * r * h * h;
    }
    case ShapeKind::kTriangle:
      return dy >= -r && dy <= r && 2.0 * std::abs(dx) <= dy + r;
  }
  return false;
}

}  // namespace

Image render(const SceneSpec& spec, int resolution) {
  if (resolution < 16) {
    throw std::invalid_argument("render: resolution must be >= 16, got " +
                                std::to_string(resolution));
  }
  if (!spec_in_bounds(spec)) throw std::invalid_argument("render: spec out of bounds");
  Image img;
  img.resolution = resolution;
  img.pixels.assign(static_cast<std::size_t>(resolution) * resolution * 3, 0.0);
  const Rgb c = color_rgb(spec.color);
  const double inv = 1.0 / resolution;
  for (int row = 0; row < resolution; ++row) {
    const double py = (row + 0.5) * inv;
    for (int col = 0; col < resolution; ++col) {
      if (!covers(spec, (col + 0.5) * inv, py)) continue;
      double* p = img.pixels.data() + (static_cast<std::size_t>(row) * resolution + col) * 3;
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
  }
  return img;
}

std::vector<std::string> caption(const SceneSpec& spec, RngStream& rng) {
  const std::string color(kColorNames[static_cast<int>(spec.color)]);
  const std::string shape(kShapeNames[static_cast<int>(spec.shape)]);
  switch (rng.below(3)) {
    case 0: return {color, shape};
    case 1: return {color, std::string(kShapeWord)};
    default: return {shape};
  }
}

bool caption_true_of(const std::vector<std::string>& words, const SceneSpec& spec) {
  const auto color = kColorNames[static_cast<int>(spec.color)];
  const auto shape = kShapeNames[static_cast<int>(spec.shape)];
  for (const auto& w : words) {
    if (w == kShapeWord) continue;
    const bool is_color = std::find(kColorNames.begin(), kColorNames.end(), w) != kColorNames.end();
    const bool is_shape = std::find(kShapeNames.begin(), kShapeNames.end(), w) != kShapeNames.end();
    if (is_color && w != color) return false;
    if (is_shape && w != shape) return false;
    if (!is_color && !is_shape) return false;
  }
  return true;
}

SceneSpec random_spec(RngStream& rng) {
  SceneSpec s;
  s.shape = static_cast<ShapeKind>(rng.below(kShapeNames.size()));
  s.color = static_cast<Color>(rng.below(kColorNames.size()));
  s.size = rng.uniform(kMinSize, kMaxSize);
  const auto [hw, hh] = half_extents(s);
  // Margin keeps x + hw <= 1 exact under rounding.
  constexpr double kMargin = 1e-9;
  s.x = rng.uniform(hw + kMargin, 1.0 - hw - kMargin);
  s.y = rng.uniform(hh + kMargin, 1.0 - hh - kMargin);
  return s;
}

GameSpec sample_game(RngStream& rng, int n_images) {
  if (n_images < 2) throw std::invalid_argument("sample_game: n_images must be >= 2");
  GameSpec g;
  const SceneSpec target = random_spec(rng);
  g.caption = caption(target, rng);
  g.target_index = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_images)));
  g.specs.resize(n_images);
  for (int i = 0; i < n_images; ++i) {
    if (i == g.target_index) {
      g.specs[i] = target;
      continue;
    }
    SceneSpec d;
    do {
      d = random_spec(rng);
    } while (caption_true_of(g.caption, d));
    g.specs[i] = d;
  }
  return g;
}

DatasetSplit generate_games(int count, int n_images, const std::string& split_id,
                            std::uint64_t seed, int resolution) {
  if (count < 1) throw std::invalid_argument("generate_games: count must be >= 1");
  if (n_images < 2) throw std::invalid_argument("generate_games: n_images must be >= 2");
  DatasetSplit split;
  split.split_id = split_id;
  split.seed = seed;
  split.resolution = resolution;
  split.n_images = n_images;
  split.games.reserve(static_cast<std::size_t>(count));
  const RngStream root = RngStream(seed).split(split_id);
  for (int i = 0; i < count; ++i) {
    RngStream rng = root.split(static_cast<std::uint64_t>(i));
    GameSpec gs = sample_game(rng, n_images);
    ReferenceGame game;
    for (const auto& s : gs.specs) game.images.push_back(render(s, resolution));
    game.specs = std::move(gs.specs);
    game.target_index = gs.target_index;
    game.caption = std::move(gs.caption);
    split.games.push_back(std::move(game));
  }
  return split;
}

namespace {

void write_header(ByteWriter& w, const DatasetSplit& split) {
  w.raw(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(split.resolution));
  w.u32(static_cast<std::uint32_t>(split.n_images));
  w.u64(split.games.size());
  w.u64(split.seed);
  w.str(split.split_id);
}

void write_game(ByteWriter& w, const ReferenceGame& g) {
  w.u32(static_cast<std::uint32_t>(g.target_index));
  w.u32(static_cast<std::uint32_t>(g.caption.size()));
  for (const auto& t : g.caption) w.str(t);
  for (const auto& s : g.specs) {
    w.u8(static_cast<std::uint8_t>(s.shape));
    w.u8(static_cast<std::uint8_t>(s.color));
    w.f64(s.x);
    w.f64(s.y);
    w.f64(s.size);
  }
  for (const auto& img : g.images) w.f64s(img.pixels.data(), img.pixels.size());
}

}  // namespace

std::string serialize_split(const DatasetSplit& split) {
  ByteWriter w;
  write_header(w, split);
  for (const auto& g : split.games) write_game(w, g);
  return w.take();
}

std::string content_hash(const DatasetSplit& split) {
  Sha256 h;
  ByteWriter w;
  write_header(w, split);
  h.update(w.bytes());
  for (const auto& g : split.games) {
    w.clear();
    write_game(w, g);
    h.update(w.bytes());
  }
  return h.hex_digest();
}

DatasetSplit deserialize_split(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kDatasetMagic.size() || r.raw(kDatasetMagic.size()) != kDatasetMagic) {
    throw FormatError("bad magic at offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    r.fail("unsupported dataset version " + std::to_string(version));
  }
  DatasetSplit split;
  split.resolution = static_cast<int>(r.u32());
  split.n_images = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  split.seed = r.u64();
  split.split_id = r.str();
  if (split.resolution < 16 || split.resolution > 4096 || split.n_images < 2 ||
      split.n_images > 1024) {
    r.fail("implausible dataset header");
  }
  const std::size_t pixels = static_cast<std::size_t>(split.resolution) * split.resolution * 3;
  const std::size_t min_game = 8 + static_cast<std::size_t>(split.n_images) * (26 + pixels * 8);
  if (count > (bytes.size() - r.offset()) / min_game) r.fail("truncated dataset: game count exceeds payload");
  split.games.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ReferenceGame g;
    g.target_index = static_cast<int>(r.u32());
    if (g.target_index >= split.n_images) r.fail("target index out of range");
    const std::uint32_t words = r.u32();
    if (words > 64) r.fail("caption too long");
    for (std::uint32_t k = 0; k < words; ++k) g.caption.push_back(r.str());
    g.specs.resize(split.n_images);
    for (auto& s : g.specs) {
      s.shape = static_cast<ShapeKind>(r.u8());
      s.color = static_cast<Color>(r.u8());
      s.x = r.f64();
      s.y = r.f64();
      s.size = r.f64();
      if (!spec_in_bounds(s)) r.fail("scene spec out of bounds");
    }
    g.images.resize(split.n_images);
    for (auto& img : g.images) {
      img.resolution = split.resolution;
      img.pixels.resize(pixels);
      r.f64s(img.pixels.data(), pixels);
    }
    split.games.push_back(std::move(g));
  }
  if (!r.at_end()) r.fail("trailing bytes after last game");
  return split;
}

void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_split(split));
}

DatasetSplit load_split(const std::filesystem::path& path) {
  return deserialize_split(read_file(path));
}

}  // namespace popcal
