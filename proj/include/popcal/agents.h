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

#ifndef POPCAL_AGENTS_H_
#define POPCAL_AGENTS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "popcal/checkpoint.h"
#include "popcal/layers.h"
#include "popcal/rng.h"
#include "popcal/tensor.h"
#include "popcal/vocab.h"
#include "popcal/worldgen.h"

namespace popcal {

struct AgentConfig {
  int resolution = 32;
  int n_images = 3;
  int conv_blocks = 4;
  int conv_filters = 16;
  int embed_dim = 64;
  int hidden_dim = 64;
  int gru_layers = 2;
  int max_len = kDefaultMaxLen;
  int vocab_size = kSmallVocabSize;
  double dropout = 0.0;

  // Flattened conv output size.
  int feature_dim() const;
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static AgentConfig from_json(const nlohmann::json& j);

  friend bool operator==(const AgentConfig&, const AgentConfig&) = default;
};

// Games as network input.
struct GameBatch {
  Tensor images;             // [B * n, 3, H, W], game-major, dataset image order
  std::vector<int> targets;  // [B]
  int n_images = 0;
  // Origin of each game when built by make_batch; lets frozen listeners
  // reuse cached image embeddings.
  const DatasetSplit* source = nullptr;
  std::vector<std::size_t> indices;

  int size() const { return static_cast<int>(targets.size()); }
};

GameBatch make_batch(const DatasetSplit& split, std::span<const std::size_t> indices);

// Utterances as listener input. `hard` always holds the forward tokens. When
// `soft` is non-empty it holds one differentiable [B, V] row block per step
// and the listener reads those instead of the ids.
struct UtteranceBatch {
  std::vector<Utterance> hard;
  std::vector<Tensor> soft;
  std::vector<int> lengths;  // tokens read per item, through the first </s>

  int size() const { return static_cast<int>(hard.size()); }
  int steps() const;
  static UtteranceBatch from_hard(std::vector<Utterance> utterances);
};

// Frozen-weight sharing: copies of an agent share parameter storage.
class Listener {
 public:
  Listener() = default;
  Listener(const AgentConfig& config, std::uint64_t seed);

  const AgentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParamList parameters() const;
  ParamList buffers() const;

  // Stops gradient tracking for every parameter and drops stale grads.
  void freeze();
  bool frozen() const;

  // Dropout is applied iff dropout_rng is non-null and config().dropout > 0.
  // `train` selects batch statistics (and updates running stats).
  //
  // images [N, 3, H, W] -> [N, hidden]
  Tensor embed_images(const Tensor& images, bool train, RngStream* dropout_rng) const;
  // -> [B, hidden], the top GRU layer's state after each item's last token.
  Tensor embed_utterances(const UtteranceBatch& u, RngStream* dropout_rng) const;
  // image_emb [B * n, hidden], utt_emb [B, hidden] -> logits [B, n]
  static Tensor score(const Tensor& image_emb, const Tensor& utt_emb, int n_images);

  Tensor logits(const GameBatch& games, const UtteranceBatch& u, bool train,
                RngStream* dropout_rng) const;

  // Independent copy with a different vocabulary size. Shared embedding rows
  // are copied; new rows get the values a fresh build with this seed would
  // have. Freezing carries over.
  Listener resized(int vocab_size) const;

  Checkpoint to_checkpoint() const;
  static Listener from_checkpoint(const Checkpoint& ckpt);

 private:
  AgentConfig config_;
  std::uint64_t seed_ = 0;
  ConvEncoder conv_;
  Linear image_proj_;
  Tensor embedding_;  // [V, embed]
  Gru gru_;
};

enum class DecodeMode { kSampleSoft, kSampleHard, kGreedy };

struct SpeakerConfig {
  DecodeMode mode = DecodeMode::kSampleSoft;
  double temperature = 1.0;
  bool straight_through = true;
};

class Speaker {
 public:
  Speaker() = default;
  Speaker(const AgentConfig& config, std::uint64_t seed);

  const AgentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParamList parameters() const;
  ParamList buffers() const;

  // Conditions on the target image first, then the distractors in dataset
  // order. Generation stops once every item has emitted </s> or max_len
  // tokens. <pad> and <s> are never emitted. `rng` may be null only for
  // greedy decoding. In kSampleSoft mode the result carries soft rows.
  UtteranceBatch speak(const GameBatch& games, bool train, const SpeakerConfig& decode,
                       RngStream* rng) const;

  Checkpoint to_checkpoint() const;
  static Speaker from_checkpoint(const Checkpoint& ckpt);

 private:
  AgentConfig config_;
  std::uint64_t seed_ = 0;
  ConvEncoder conv_;
  Linear init_;  // [n * F] -> [layers * hidden]
  Tensor embedding_;
  Gru gru_;
  Linear out_;
};

}  // namespace popcal

#endif  // POPCAL_AGENTS_H_
