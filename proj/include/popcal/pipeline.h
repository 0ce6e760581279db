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

#ifndef POPCAL_PIPELINE_H_
#define POPCAL_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "popcal/config.h"
#include "popcal/evaluation.h"
#include "popcal/populations.h"
#include "popcal/training.h"
#include "popcal/vocab.h"
#include "popcal/worldgen.h"

namespace popcal {

// Inputs a stage needs are not on disk. what() lists every missing path.
class MissingArtifacts : public std::runtime_error {
 public:
  explicit MissingArtifacts(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::vector<std::string> missing_;
};

// A job stopped early through RunOptions::stop_after_epoch.
class Interrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs fn(0..count-1) on up to `jobs` threads. Every index runs; the first
// failure by index is rethrown after all workers finish.
void run_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

struct SplitRequest {
  std::string name;  // split ids are name-0, name-1, ...
  int count = 1;
  int games = 0;
};

// Parses "listener:5,val-listener:3,speaker:1". Throws UsageError.
std::vector<SplitRequest> parse_split_requests(const std::string& text, int games);

// Generates the requested splits into `dir` as <id>.pcw and merges their
// entries into dir/manifest.json. Existing files whose manifest entry matches
// are kept. Returns the manifest.
nlohmann::json generate_splits(const std::filesystem::path& dir,
                               const std::vector<SplitRequest>& requests, std::uint64_t seed,
                               int resolution, int n_images, int jobs);

// Vocabulary side and listener population a speaker is trained against.
// ensemble:1 is the same population as single_l0 and shares its artifacts.
struct Condition {
  bool large_vocab = true;
  PopulationKind kind = PopulationKind::kSingleL0;
  int n = 1;

  // "small-single_l0", "large-ensemble-10", ...
  std::string name() const;
  // `population` is "single_l0", "ensemble:N" or "dropout:N"; `vocab` is
  // "small" or "large". Throws UsageError.
  static Condition parse(const std::string& population, const std::string& vocab);
  friend bool operator==(const Condition&, const Condition&) = default;
};

struct RunOptions {
  std::filesystem::path root = "popcal-out";
  int jobs = 1;
  int stop_after_epoch = 0;  // testing hook for resumable training
  std::ostream* log = nullptr;
};

struct GridSummary {
  Condition condition;
  std::map<std::string, MeanStderr> cells;  // over seeds
};

// Artifact layout under the output root:
//
//   config.ini                      effective config
//   vocab/small.vocab, large.vocab
//   data/<split>.pcw, manifest.json
//   listeners/<name>.ckpt, .log.jsonl
//   speakers/<condition>/seed<k>.ckpt, seed<k>.log.jsonl, population.json
//   results/grid-<condition>-seed<k>.json, calibration.json, topicality.json
//   reports/table1.csv, fig2.dat, fig3.dat, table3.csv
//
// Every stage skips work whose artifact already records the same inputs.
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, RunOptions options);

  const ExperimentConfig& config() const { return config_; }
  const RunOptions& options() const { return options_; }
  std::string config_hash() const { return config_.hash(); }
  const Vocab& vocab(bool large) const { return large ? large_vocab_ : small_vocab_; }

  std::filesystem::path data_dir() const { return options_.root / "data"; }
  std::filesystem::path listener_path(const std::string& name) const;
  std::filesystem::path speaker_path(const Condition& c, int seed_index) const;
  std::filesystem::path grid_path(const Condition& c, int seed_index) const;
  std::filesystem::path calibration_path() const;
  std::filesystem::path topicality_path() const;
  std::filesystem::path report_dir() const { return options_.root / "reports"; }

  std::vector<std::string> listener_names() const;  // listener-i then val-listener-j
  std::vector<Condition> table_conditions() const;
  std::vector<Condition> sweep_conditions(PopulationKind kind) const;
  // Large vocabulary, largest configured ensemble.
  Condition ensemble_condition() const;
  std::vector<Condition> all_conditions() const;

  std::uint64_t listener_seed(const std::string& name) const;
  std::uint64_t speaker_seed(int seed_index) const;

  // Effective config and both vocabularies.
  void write_config() const;

  nlohmann::json gen_data() const;
  // Trains and saves the listener for split `name` unless an up-to-date
  // checkpoint exists. seed_override replaces the derived init seed.
  ListenerTrainResult train_listener(const std::string& name,
                                     std::optional<std::uint64_t> seed_override = {}) const;
  void train_listeners(const std::vector<std::string>& names) const;
  Listener load_listener(const std::string& name, bool large_vocab) const;
  Population population(const Condition& c) const;

  Speaker train_speaker(const Condition& c, int seed_index) const;
  void train_speakers(const std::vector<Condition>& conditions) const;
  Speaker load_speaker(const Condition& c, int seed_index) const;

  AccuracyGrid evaluate(const Condition& c, int seed_index) const;
  void evaluate_all(const std::vector<Condition>& conditions) const;
  nlohmann::json calibrate() const;
  nlohmann::json topicality() const;

  GridSummary summarize(const Condition& c) const;
  // Throws MissingArtifacts naming every absent or stale result.
  void report() const;
  void reproduce() const;

  std::vector<std::string> missing_results() const;

 private:
  std::shared_ptr<const DatasetSplit> split(const std::string& id) const;
  std::string split_hash(const std::string& id) const;
  void log(const std::string& line) const;

  ExperimentConfig config_;
  RunOptions options_;
  Vocab small_vocab_;
  Vocab large_vocab_;

  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const DatasetSplit>> splits_;
};

// {"mean", "se", "count"}.
nlohmann::json to_json(const MeanStderr& m);
MeanStderr mean_stderr_from_json(const nlohmann::json& j);

}  // namespace popcal

#endif  // POPCAL_PIPELINE_H_
