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

#include "popcal/populations.h"

#include <cmath>
#include <stdexcept>

#include "popcal/ops.h"

namespace popcal {
namespace {

std::string split_key(const DatasetSplit& s) {
  return s.split_id + "/" + std::to_string(s.seed) + "/" + std::to_string(s.resolution) + "/" +
         std::to_string(s.n_images) + "/" + std::to_string(s.games.size());
}

}  // namespace

std::string population_kind_name(PopulationKind kind) {
  switch (kind) {
    case PopulationKind::kSingleL0:
      return "single_l0";
    case PopulationKind::kEnsemble:
      return "ensemble";
    case PopulationKind::kDropout:
      return "dropout";
  }
  return "unknown";
}

PopulationKind parse_population_kind(const std::string& name) {
  if (name == "single_l0") return PopulationKind::kSingleL0;
  if (name == "ensemble") return PopulationKind::kEnsemble;
  if (name == "dropout") return PopulationKind::kDropout;
  throw std::invalid_argument("unknown population kind '" + name +
                              "' (expected single_l0, ensemble or dropout)");
}

Population::Population(PopulationKind kind, std::vector<Listener> listeners, int passes)
    : kind_(kind),
      listeners_(std::move(listeners)),
      passes_(passes),
      cache_(std::make_shared<std::vector<Cache>>(listeners_.size())) {
  for (const auto& l : listeners_) {
    if (l.config().vocab_size != listeners_[0].config().vocab_size ||
        l.config().resolution != listeners_[0].config().resolution) {
      throw std::invalid_argument("population: members disagree on vocabulary or resolution");
    }
  }
}

Population Population::single(Listener listener) {
  return Population(PopulationKind::kSingleL0, {std::move(listener)}, 1);
}

Population Population::ensemble(std::vector<Listener> listeners) {
  if (listeners.empty()) throw std::invalid_argument("population: ensemble needs members");
  return Population(PopulationKind::kEnsemble, std::move(listeners), 1);
}

Population Population::dropout(Listener listener, int passes) {
  if (passes < 1) throw std::invalid_argument("population: dropout needs at least one pass");
  if (!(listener.config().dropout > 0.0)) {
    throw std::invalid_argument("population: dropout population needs a listener trained with dropout");
  }
  return Population(PopulationKind::kDropout, {std::move(listener)}, passes);
}

int Population::size() const {
  return kind_ == PopulationKind::kDropout ? passes_ : static_cast<int>(listeners_.size());
}

bool Population::frozen() const {
  for (const auto& l : listeners_) {
    if (!l.frozen()) return false;
  }
  return true;
}

void Population::clear_cache() const {
  for (auto& c : *cache_) c.games.clear();
}

Tensor Population::image_embeddings(std::size_t member, const GameBatch& games) const {
  const Listener& l = listeners_[member];
  if (!games.source || games.indices.size() != static_cast<std::size_t>(games.size()) ||
      !l.frozen()) {
    return l.embed_images(games.images, false, nullptr);
  }
  const int n = games.n_images;
  const std::int64_t per_image = games.images.numel() / games.images.dim(0);
  const std::int64_t hidden = l.config().hidden_dim;
  auto& slot = (*cache_)[member].games[split_key(*games.source)];
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(games.size()) * n * hidden);
  for (int b = 0; b < games.size(); ++b) {
    auto it = slot.find(games.indices[b]);
    if (it == slot.end()) {
      // One game at a time so cached values do not depend on batch makeup.
      const auto src = games.images.values().subspan(
          static_cast<std::size_t>(b) * n * per_image, static_cast<std::size_t>(n * per_image));
      Dims dims = games.images.dims();
      dims[0] = n;
      const Tensor e =
          l.embed_images(Tensor(dims, std::vector<double>(src.begin(), src.end())), false, nullptr);
      it = slot.emplace(games.indices[b], std::vector<double>(e.values().begin(), e.values().end()))
               .first;
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return Tensor({static_cast<std::int64_t>(games.size()) * n, hidden}, std::move(out));
}

std::vector<Tensor> Population::member_log_probs(const GameBatch& games, const UtteranceBatch& u,
                                                 RngStream* mask_rng) const {
  std::vector<Tensor> out;
  if (kind_ == PopulationKind::kDropout) {
    if (!mask_rng) throw std::invalid_argument("population: dropout passes need a mask rng");
    const Listener& l = listeners_[0];
    for (int p = 0; p < passes_; ++p) {
      out.push_back(ops::log_softmax(l.logits(games, u, false, mask_rng)));
    }
    return out;
  }
  for (std::size_t j = 0; j < listeners_.size(); ++j) {
    const Listener& l = listeners_[j];
    const Tensor img = image_embeddings(j, games);
    const Tensor utt = l.embed_utterances(u, nullptr);
    out.push_back(ops::log_softmax(Listener::score(img, utt, games.n_images)));
  }
  return out;
}

Tensor Population::log_probs(const GameBatch& games, const UtteranceBatch& u,
                             RngStream* mask_rng) const {
  std::vector<Tensor> members = member_log_probs(games, u, mask_rng);
  if (members.size() == 1) return members[0];
  return ops::log_mean_exp(members);
}

nlohmann::json Population::manifest() const {
  nlohmann::json j;
  j["kind"] = population_kind_name(kind_);
  j["size"] = size();
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& l : listeners_) seeds.push_back(l.seed());
  j["listener_seeds"] = seeds;
  j["dropout"] = listeners_[0].config().dropout;
  j["vocab_size"] = listeners_[0].config().vocab_size;
  return j;
}

std::vector<double> row_entropy(const Tensor& log_probs) {
  const std::int64_t k = log_probs.dim(-1);
  const std::int64_t rows = log_probs.numel() / k;
  std::vector<double> out(static_cast<std::size_t>(rows));
  const auto v = log_probs.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    double h = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
      const double lp = v[r * k + i];
      if (std::isfinite(lp)) h -= std::exp(lp) * lp;
    }
    out[r] = h;
  }
  return out;
}

}  // namespace popcal
