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

#ifndef POPCAL_CONFIG_H_
#define POPCAL_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "popcal/agents.h"
#include "popcal/training.h"

namespace popcal {

inline constexpr std::string_view kVersion = "0.1.0";

// Bad flags, unknown keys, out-of-range values. The CLI maps it to exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything that determines an experiment's outputs. Worker count and the
// output directory live in RunOptions since they do not change results.
struct ExperimentConfig {
  std::string preset = "desk";

  // [data]
  int resolution = 32;
  int n_images = 3;
  int games = 2000;  // per listener split
  int speaker_games = 2000;
  int speaker_val_games = 1000;
  std::uint64_t seed = 7;
  int listeners = 10;
  int val_listeners = 3;

  // [model]
  int conv_blocks = 4;
  int conv_filters = 16;
  int embed_dim = 64;
  int hidden_dim = 64;
  int gru_layers = 2;
  int max_len = kDefaultMaxLen;
  double dropout = 0.1;

  // [vocab]
  int large_size = 2000;

  ListenerTrainConfig listener;
  // Desk speakers take ~25x fewer steps than full scale, so a larger step.
  SpeakerTrainConfig speaker{.lr = 0.002};

  // [experiment]
  int seeds = 3;
  std::vector<int> ensemble_sizes = {1, 10};
  std::vector<int> dropout_sizes = {1, 10};
  int eval_games = 1000;
  int calibration_games = 500;
  int low_max_draws = 20;
  int low_min_kept = 50;
  int topicality_games = 500;

  // "desk", "paper" or "tiny". Throws UsageError otherwise.
  static ExperimentConfig preset_named(const std::string& name);

  // Sets "section.key" from its text form. Throws UsageError on unknown keys
  // and unparsable values.
  void set(const std::string& key, const std::string& value);
  // INI text: [section] headers and key = value lines, ';' or '#' comments.
  // A "preset" key in [experiment] is applied first.
  static ExperimentConfig from_ini(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void apply_ini(std::string_view text);

  // Canonical INI: fixed key order, shortest round-trip numbers.
  std::string to_ini() const;
  // SHA-256 of to_ini().
  std::string hash() const;
  // Throws UsageError naming the offending key.
  void validate() const;

  AgentConfig agent(int vocab_size) const;
  int max_ensemble() const;
  int max_dropout() const;
};

std::vector<std::string> config_keys();

}  // namespace popcal

#endif  // POPCAL_CONFIG_H_
