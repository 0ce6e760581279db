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

#ifndef POPCAL_EVALUATION_H_
#define POPCAL_EVALUATION_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "popcal/agents.h"
#include "popcal/populations.h"
#include "popcal/training.h"
#include "popcal/vocab.h"

namespace popcal {

// Games of `split` with indices [0, count).
std::vector<std::size_t> first_games(const DatasetSplit& split, std::size_t count);

// Speaker utterances for the given games, eval-mode batchnorm. Sampled modes
// draw from `rng`.
std::vector<Utterance> speaker_utterances(const Speaker& speaker, const DatasetSplit& split,
                                          std::span<const std::size_t> games, DecodeMode mode,
                                          RngStream* rng, int batch_size = 64);

// Per-game correctness (1 or 0) of a population's argmax, lowest index on
// ties. Dropout passes draw masks from mask_rng.
std::vector<double> population_correct(const Population& pop, const DatasetSplit& split,
                                       std::span<const std::size_t> games,
                                       std::span<const Utterance> utterances,
                                       RngStream* mask_rng, int batch_size = 64);

// Mean with binomial standard error sqrt(p (1 - p) / N) <= 0.5 / sqrt(N).
MeanStderr bernoulli_mean(std::span<const double> outcomes);

struct AccuracyGrid {
  MeanStderr train_l_train_d, train_l_val_d, val_l_train_d, val_l_val_d;
  MeanStderr token_overlap;  // percent, over val-D utterances
};

struct GridOptions {
  std::size_t max_games = 1000;  // per split
  DecodeMode mode = DecodeMode::kGreedy;
  std::uint64_t seed = 0;  // sampling and dropout-mask streams
};

// Train-L is the training population's aggregate prediction; val-L averages
// the held-out listeners' individual accuracies. Throws
// std::invalid_argument when a validation listener is also a population
// member (identical parameters).
AccuracyGrid eval_accuracy_grid(const Speaker& speaker, const Population& train_pop,
                                const std::vector<Listener>& val_listeners,
                                const DatasetSplit& train_split, const DatasetSplit& val_split,
                                const Vocab& vocab, const GridOptions& options = {});

enum class OverlapLevel { kLow, kMedium, kHigh };
std::string overlap_level_name(OverlapLevel level);

// Utterances paired with the evaluation games they were produced for.
struct OverlapSet {
  OverlapLevel level = OverlapLevel::kHigh;
  std::vector<std::size_t> games;
  std::vector<Utterance> utterances;
  double mean_overlap = 0.0;  // percent
  double yield = 1.0;         // kept / drawn, for the filtered low set
};

// Ground-truth captions: 100% overlap.
OverlapSet high_overlap_set(const DatasetSplit& split, std::span<const std::size_t> games,
                            const Vocab& vocab, int max_len);
// Sampled utterances of a speaker trained against the ensemble population.
OverlapSet medium_overlap_set(const Speaker& speaker, const DatasetSplit& split,
                              std::span<const std::size_t> games, const Vocab& vocab,
                              RngStream& rng);
// Sampled utterances of a speaker trained against a single listener, keeping
// only those with 0% overlap. Each game is sampled up to `max_draws` times;
// games without a 0% sample are dropped. Throws std::runtime_error reporting
// the yield when fewer than min_kept games remain.
OverlapSet low_overlap_set(const Speaker& speaker, const DatasetSplit& split,
                           std::span<const std::size_t> games, const Vocab& vocab, RngStream& rng,
                           int max_draws, std::size_t min_kept);

struct CalibrationPoint {
  std::string kind;  // population kind label
  OverlapLevel level = OverlapLevel::kLow;
  MeanStderr entropy;  // nats
};

// Mean population entropy over each set's (game, utterance) pairs.
std::vector<CalibrationPoint> calibration_curve(
    const std::vector<std::pair<std::string, const Population*>>& populations,
    const std::vector<OverlapSet>& sets, const DatasetSplit& split, std::uint64_t seed);

// Idealized listener: ln(n_images) at low overlap, 0 at high; undefined at
// medium.
double idealized_entropy(OverlapLevel level, int n_images);

// Word vectors for topicality. Text format: one "word v1 ... vd" per line.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(int dim) : dim_(dim) {}

  // Deterministic table for every token of `vocab` except specials: domain
  // words cluster by attribute around a shared domain centre, filler words
  // are independent directions of comparable norm.
  static EmbeddingTable bundled(const Vocab& vocab, int dim = 50);
  // Throws FormatError with the line number on malformed input.
  static EmbeddingTable parse(std::string_view text);
  static EmbeddingTable load(const std::filesystem::path& path);
  std::string serialize() const;

  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  void set(const std::string& word, std::vector<double> v);
  bool contains(const std::string& word) const { return vectors_.count(word) > 0; }
  // Zero vector for unknown words.
  std::vector<double> lookup(const std::string& word) const;

 private:
  int dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::vector<std::string> order_;
};

struct TopicalityRow {
  std::string speaker;  // limited, calibrated, miscalibrated
  MeanStderr sum_distance, first_distance;
  double coverage = 1.0;  // fraction of speaker tokens found in the table
};

// d(z_GT, SUM(z_S)) and d(z_GT, FIRST(z_S)) per game, averaged. Special
// tokens are skipped; an utterance with no words embeds to zero.
TopicalityRow topicality(const std::string& label, const DatasetSplit& split,
                         std::span<const std::size_t> games, std::span<const Utterance> utterances,
                         const Vocab& vocab, const EmbeddingTable& table);

}  // namespace popcal

#endif  // POPCAL_EVALUATION_H_
