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

#ifndef POPCAL_TRAINING_H_
#define POPCAL_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "popcal/agents.h"
#include "popcal/populations.h"

namespace popcal {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  // One JSON object per line.
  std::string to_jsonl() const;
  nlohmann::json to_json() const;
  static TrainLog from_json(const nlohmann::json& j);
  // Equality ignoring wall time.
  bool same_metrics(const TrainLog& other) const;
};

// Optional resumability. When state_path is set, full training state is
// written atomically after every epoch and an existing state file with a
// matching configuration is resumed from. stop_after_epoch > 0 ends the run
// early (completed = false), simulating an interruption.
struct TrainHooks {
  std::filesystem::path state_path;
  int stop_after_epoch = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct ListenerTrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.01;
  double val_fraction = 0.1;
  double gate = 0.90;
  int max_attempts = 4;  // first run plus three retries

  nlohmann::json to_json() const;
};

struct ListenerTrainResult {
  Listener listener;
  TrainLog log;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::uint64_t seed = 0;  // seed of the admitted attempt
  int attempts = 0;
  bool completed = true;
};

// Raised when no attempt reaches the accuracy gate.
class GateFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Supervised pretraining on ground-truth captions: minimises
// -log softmax(listener logits)[target] with Adam. The last val_fraction of
// the split is held out for validation accuracy. An attempt whose train or
// validation accuracy is below the gate is retried with a fresh seed.
ListenerTrainResult train_listener(const AgentConfig& config, const ListenerTrainConfig& train,
                                   const DatasetSplit& split, std::uint64_t seed,
                                   const TrainHooks& hooks = {});

// Accuracy of a listener on ground-truth captions, eval mode.
double listener_accuracy(const Listener& listener, const DatasetSplit& split,
                         std::span<const std::size_t> indices, int batch_size = 64);

struct SpeakerTrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.001;
  double temperature = 1.0;
  bool straight_through = true;
  int log_val_games = 256;

  nlohmann::json to_json() const;
};

struct SpeakerTrainResult {
  Speaker speaker;
  TrainLog log;
  bool completed = true;
};

// Minimises -log p_pop(target | u) for one Gumbel-Softmax utterance sample per
// game. Only speaker parameters change; the population must be frozen. The
// log's train accuracy is the population's argmax on the sampled training
// utterances and its val accuracy uses greedy utterances on `val` (if given).
SpeakerTrainResult train_speaker(const AgentConfig& config, const SpeakerTrainConfig& train,
                                 const DatasetSplit& split, const DatasetSplit* val,
                                 const Population& population, std::uint64_t seed,
                                 const TrainHooks& hooks = {});

// Number of rows whose argmax (lowest index on ties) equals the target.
int count_correct(const Tensor& scores, std::span<const int> targets);

struct MeanStderr {
  double mean = 0.0;
  double se = 0.0;  // s / sqrt(k) with the k - 1 sample deviation; 0 for k = 1
  int count = 0;
};
MeanStderr mean_stderr(std::span<const double> values);

using Metrics = std::map<std::string, double>;
// Runs `run(r)` for r = 0..n_seeds-1 and aggregates every metric.
std::map<std::string, MeanStderr> run_replicates(int n_seeds,
                                                 const std::function<Metrics(int)>& run);

}  // namespace popcal

#endif  // POPCAL_TRAINING_H_
