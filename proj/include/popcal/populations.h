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

#ifndef POPCAL_POPULATIONS_H_
#define POPCAL_POPULATIONS_H_

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "popcal/agents.h"

namespace popcal {

enum class PopulationKind { kSingleL0, kEnsemble, kDropout };

std::string population_kind_name(PopulationKind kind);
// Accepts "single_l0", "ensemble", "dropout". Throws std::invalid_argument.
PopulationKind parse_population_kind(const std::string& name);

// A set of frozen listeners whose predictive distributions are averaged:
//
//   p_pop(k | u, images) = (1/n) sum_j p_j(k | u, images)
//
// computed in log space with log-mean-exp.
//
//   single_l0  one listener in eval mode
//   ensemble   n independently trained listeners in eval mode
//   dropout    one listener evaluated n times with fresh dropout masks
//              (batchnorm stays in eval mode)
class Population {
 public:
  static Population single(Listener listener);
  static Population ensemble(std::vector<Listener> listeners);
  // Throws std::invalid_argument if the listener has no dropout or n < 1.
  static Population dropout(Listener listener, int passes);

  PopulationKind kind() const { return kind_; }
  // Number of averaged predictive distributions.
  int size() const;
  const std::vector<Listener>& listeners() const { return listeners_; }
  bool frozen() const;

  // Per-member log-probabilities, each [B, n]. mask_rng is required for
  // dropout populations and ignored otherwise.
  std::vector<Tensor> member_log_probs(const GameBatch& games, const UtteranceBatch& u,
                                       RngStream* mask_rng) const;
  // log p_pop, [B, n].
  Tensor log_probs(const GameBatch& games, const UtteranceBatch& u, RngStream* mask_rng) const;

  nlohmann::json manifest() const;

  // Drops cached image embeddings.
  void clear_cache() const;

 private:
  Population(PopulationKind kind, std::vector<Listener> listeners, int passes);
  Tensor image_embeddings(std::size_t member, const GameBatch& games) const;

  PopulationKind kind_;
  std::vector<Listener> listeners_;
  int passes_ = 1;

  // Eval-mode image embeddings per member, keyed by split identity then game.
  struct Cache {
    std::map<std::string, std::map<std::size_t, std::vector<double>>> games;
  };
  std::shared_ptr<std::vector<Cache>> cache_;
};

// Shannon entropy in nats of each row of exp(log_probs) [B, n].
std::vector<double> row_entropy(const Tensor& log_probs);

}  // namespace popcal

#endif  // POPCAL_POPULATIONS_H_
