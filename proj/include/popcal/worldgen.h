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

#ifndef POPCAL_WORLDGEN_H_
#define POPCAL_WORLDGEN_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "popcal/rng.h"

namespace popcal {

enum class ShapeKind : std::uint8_t { kCircle, kSquare, kRectangle, kEllipse, kTriangle };
enum class Color : std::uint8_t { kRed, kBlue, kGreen, kYellow, kWhite, kGray };

inline constexpr std::array<std::string_view, 5> kShapeNames = {
    "circle", "square", "rectangle", "ellipse", "triangle"};
inline constexpr std::array<std::string_view, 6> kColorNames = {
    "red", "blue", "green", "yellow", "white", "gray"};
// Generic noun used by the "<color> shape" caption template.
inline constexpr std::string_view kShapeWord = "shape";

inline constexpr double kMinSize = 0.1;
inline constexpr double kMaxSize = 0.35;

struct Rgb {
  double r, g, b;
};
Rgb color_rgb(Color c);

// One flat-coloured shape on a black background. (x, y) is the centre in the
// unit square with y pointing down; size is the half-width of the shape.
// Rectangles and ellipses are half as tall as wide; triangles point up.
struct SceneSpec {
  ShapeKind shape = ShapeKind::kCircle;
  Color color = Color::kRed;
  double x = 0.5;
  double y = 0.5;
  double size = 0.2;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

// Half extents (horizontal, vertical) of the shape's bounding box.
std::array<double, 2> half_extents(const SceneSpec& spec);
bool spec_in_bounds(const SceneSpec& spec);

// H x W x 3 pixels in [0, 1], row-major with channels last.
struct Image {
  int resolution = 0;
  std::vector<double> pixels;

  double at(int row, int col, int channel) const {
    return pixels[(static_cast<std::size_t>(row) * resolution + col) * 3 + channel];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Rasterises pixel centres against the exact shape; no anti-aliasing.
// Throws std::invalid_argument for out-of-bounds specs or resolution < 16.
Image render(const SceneSpec& spec, int resolution);

// "<color> <shape>", "<color> shape" or "<shape>", chosen uniformly by rng.
std::vector<std::string> caption(const SceneSpec& spec, RngStream& rng);
// Whether a caption produced by caption() describes `spec`.
bool caption_true_of(const std::vector<std::string>& caption, const SceneSpec& spec);

SceneSpec random_spec(RngStream& rng);

// A game before rendering.
struct GameSpec {
  std::vector<SceneSpec> specs;
  int target_index = 0;
  std::vector<std::string> caption;
};

struct ReferenceGame {
  std::vector<Image> images;
  std::vector<SceneSpec> specs;
  int target_index = 0;
  std::vector<std::string> caption;
};

struct DatasetSplit {
  std::string split_id;
  std::uint64_t seed = 0;
  int resolution = 32;
  int n_images = 3;
  std::vector<ReferenceGame> games;
};

// Target and caption drawn first; distractors are rejection-sampled until the
// target's caption is false of each of them (which implies each differs from
// the target in at least one attribute). Target position is uniform.
GameSpec sample_game(RngStream& rng, int n_images);

// Game i depends only on (seed, split_id, i).
DatasetSplit generate_games(int count, int n_images, const std::string& split_id,
                            std::uint64_t seed, int resolution = 32);

inline constexpr std::string_view kDatasetMagic{"PCWORLD\x01", 8};
inline constexpr std::uint32_t kDatasetVersion = 1;

// Canonical byte stream (see docs/formats.md); its SHA-256 is the content hash.
std::string serialize_split(const DatasetSplit& split);
DatasetSplit deserialize_split(std::string_view bytes);
std::string content_hash(const DatasetSplit& split);

void save_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace popcal

#endif  // POPCAL_WORLDGEN_H_
