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

#include "popcal/agents.h"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "popcal/io.h"
#include "popcal/ops.h"

namespace popcal {
namespace {

void require_positive(int v, const char* name) {
  if (v <= 0) {
    throw std::invalid_argument(std::string("agent config: ") + name + " must be positive, got " +
                                std::to_string(v));
  }
}

std::vector<Tensor> zero_state(const AgentConfig& c, int batch) {
  return std::vector<Tensor>(static_cast<std::size_t>(c.gru_layers),
                             Tensor({batch, c.hidden_dim}));
}

AgentConfig config_from_checkpoint(const Checkpoint& ckpt, const char* kind) {
  if (ckpt.kind != kind) {
    throw FormatError(std::string("checkpoint: expected kind '") + kind + "', found '" +
                      ckpt.kind + "'");
  }
  try {
    return AgentConfig::from_json(ckpt.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad agent config: ") + e.what());
  }
}

std::uint64_t seed_from_checkpoint(const Checkpoint& ckpt) {
  try {
    return ckpt.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad seed: ") + e.what());
  }
}

Checkpoint make_checkpoint(const char* kind, const AgentConfig& c, std::uint64_t seed,
                           const ParamList& params, const ParamList& buffers) {
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.meta["config"] = c.to_json();
  ckpt.meta["seed"] = seed;
  for (const auto& p : params) ckpt.tensors.push_back({p.name, p.tensor.detach()});
  for (const auto& b : buffers) ckpt.tensors.push_back({b.name, b.tensor.detach()});
  return ckpt;
}

}  // namespace

int AgentConfig::feature_dim() const {
  const int side = resolution >> conv_blocks;
  return conv_filters * side * side;
}

void AgentConfig::validate() const {
  require_positive(resolution, "resolution");
  require_positive(n_images, "n_images");
  require_positive(conv_blocks, "conv_blocks");
  require_positive(conv_filters, "conv_filters");
  require_positive(embed_dim, "embed_dim");
  require_positive(hidden_dim, "hidden_dim");
  require_positive(gru_layers, "gru_layers");
  require_positive(max_len, "max_len");
  if (n_images < 2) throw std::invalid_argument("agent config: n_images must be at least 2");
  if (conv_blocks > 16 || resolution % (1 << conv_blocks) != 0) {
    throw std::invalid_argument("agent config: resolution " + std::to_string(resolution) +
                                " is not divisible by 2^conv_blocks");
  }
  if (vocab_size < kSmallVocabSize) {
    throw std::invalid_argument("agent config: vocab_size must be at least " +
                                std::to_string(kSmallVocabSize));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("agent config: dropout must be in [0, 1)");
  }
}

nlohmann::json AgentConfig::to_json() const {
  return {{"resolution", resolution},   {"n_images", n_images},   {"conv_blocks", conv_blocks},
          {"conv_filters", conv_filters}, {"embed_dim", embed_dim}, {"hidden_dim", hidden_dim},
          {"gru_layers", gru_layers},   {"max_len", max_len},     {"vocab_size", vocab_size},
          {"dropout", dropout}};
}

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.n_images = j.at("n_images").get<int>();
  c.conv_blocks = j.at("conv_blocks").get<int>();
  c.conv_filters = j.at("conv_filters").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.gru_layers = j.at("gru_layers").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

GameBatch make_batch(const DatasetSplit& split, std::span<const std::size_t> indices) {
  const int n = split.n_images;
  const int res = split.resolution;
  const std::size_t plane = static_cast<std::size_t>(res) * res;
  GameBatch batch;
  batch.n_images = n;
  batch.source = &split;
  batch.indices.assign(indices.begin(), indices.end());
  std::vector<double> v(indices.size() * n * 3 * plane);
  std::size_t img = 0;
  for (std::size_t idx : indices) {
    const ReferenceGame& g = split.games.at(idx);
    batch.targets.push_back(g.target_index);
    for (const Image& im : g.images) {
      double* dst = v.data() + img * 3 * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        for (int ch = 0; ch < 3; ++ch) dst[ch * plane + p] = im.pixels[p * 3 + ch];
      }
      ++img;
    }
  }
  batch.images = Tensor({static_cast<std::int64_t>(indices.size()) * n, 3, res, res}, std::move(v));
  return batch;
}

int UtteranceBatch::steps() const {
  return lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
}

UtteranceBatch UtteranceBatch::from_hard(std::vector<Utterance> utterances) {
  UtteranceBatch b;
  for (const auto& u : utterances) b.lengths.push_back(utterance_length(u.ids));
  b.hard = std::move(utterances);
  return b;
}

Listener::Listener(const AgentConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const RngStream root = RngStream(seed).split("listener");
  conv_ = ConvEncoder(config_.conv_blocks, config_.conv_filters, 3, root.split("conv"));
  image_proj_ = Linear(config_.feature_dim(), config_.hidden_dim, root.split("image_proj"));
  embedding_ = init_rows(config_.vocab_size, config_.embed_dim, 1.0, root.split("embedding"));
  gru_ = Gru(config_.embed_dim, config_.hidden_dim, config_.gru_layers, root.split("gru"));
}

ParamList Listener::parameters() const {
  ParamList out;
  ParamList unused;
  conv_.collect("conv", out, unused);
  image_proj_.collect("image_proj", out);
  out.push_back({"embedding", embedding_});
  gru_.collect("gru", out);
  return out;
}

ParamList Listener::buffers() const {
  ParamList params;
  ParamList out;
  conv_.collect("conv", params, out);
  return out;
}

void Listener::freeze() {
  for (auto& p : parameters()) {
    p.tensor.set_requires_grad(false);
    p.tensor.clear_grad();
  }
}

bool Listener::frozen() const {
  for (const auto& p : parameters()) {
    if (p.tensor.requires_grad()) return false;
  }
  return true;
}

Tensor Listener::embed_images(const Tensor& images, bool train, RngStream* dropout_rng) const {
  return image_proj_.forward(conv_.forward(images, train, config_.dropout, dropout_rng));
}

Tensor Listener::embed_utterances(const UtteranceBatch& u, RngStream* dropout_rng) const {
  const int batch = u.size();
  const int steps = u.steps();
  if (static_cast<int>(u.lengths.size()) != batch) {
    throw std::invalid_argument("listener: utterance batch has mismatched lengths");
  }
  if (!u.soft.empty() && static_cast<int>(u.soft.size()) < steps) {
    throw std::invalid_argument("listener: soft utterance has fewer rows than steps");
  }
  std::vector<Tensor> h = zero_state(config_, batch);
  std::vector<int> ids(static_cast<std::size_t>(batch));
  const double rate = config_.dropout;
  for (int t = 0; t < steps; ++t) {
    Tensor x;
    if (u.soft.empty()) {
      for (int b = 0; b < batch; ++b) {
        const auto& row = u.hard[b].ids;
        ids[b] = t < static_cast<int>(row.size()) ? row[t] : Vocab::kPad;
        if (ids[b] < 0 || ids[b] >= config_.vocab_size) {
          throw std::out_of_range("listener: token id " + std::to_string(ids[b]) +
                                  " outside vocabulary of size " +
                                  std::to_string(config_.vocab_size));
        }
      }
      x = ops::embedding(embedding_, ids);
    } else {
      x = ops::matmul(u.soft[t], embedding_);
    }
    std::vector<Tensor> next = gru_.step(x, h, rate, dropout_rng);
    bool all_active = true;
    for (int b = 0; b < batch; ++b) all_active = all_active && t < u.lengths[b];
    if (all_active) {
      h = std::move(next);
      continue;
    }
    std::vector<double> m(static_cast<std::size_t>(batch) * config_.hidden_dim);
    for (int b = 0; b < batch; ++b) {
      std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(b) * config_.hidden_dim,
                  config_.hidden_dim, t < u.lengths[b] ? 1.0 : 0.0);
    }
    const Tensor mask({batch, config_.hidden_dim}, std::move(m));
    for (std::size_t l = 0; l < h.size(); ++l) {
      h[l] = ops::add(h[l], ops::mul(mask, ops::sub(next[l], h[l])));
    }
  }
  return h.back();
}

Tensor Listener::score(const Tensor& image_emb, const Tensor& utt_emb, int n_images) {
  const std::int64_t batch = utt_emb.dim(0);
  if (image_emb.dim(0) != batch * n_images) {
    throw ShapeError("listener score: " + dims_string(image_emb.dims()) +
                     " image embeddings for " + std::to_string(batch) + " games of " +
                     std::to_string(n_images) + " images");
  }
  return ops::batched_dot(ops::reshape(image_emb, {batch, n_images, image_emb.dim(1)}), utt_emb);
}

Tensor Listener::logits(const GameBatch& games, const UtteranceBatch& u, bool train,
                        RngStream* dropout_rng) const {
  if (games.size() != u.size()) {
    throw std::invalid_argument("listener: " + std::to_string(games.size()) + " games but " +
                                std::to_string(u.size()) + " utterances");
  }
  const Tensor img = embed_images(games.images, train, dropout_rng);
  return score(img, embed_utterances(u, dropout_rng), games.n_images);
}

Listener Listener::resized(int vocab_size) const {
  AgentConfig c = config_;
  c.vocab_size = vocab_size;
  Listener out(c, seed_);
  const ParamList src = parameters();
  const ParamList dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto from = src[i].tensor.values();
    Tensor to = dst[i].tensor;
    const std::size_t n = std::min(from.size(), to.values().size());
    std::copy_n(from.begin(), n, to.mutable_values().begin());
  }
  const ParamList sb = buffers();
  const ParamList db = out.buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) {
    Tensor to = db[i].tensor;
    std::ranges::copy(sb[i].tensor.values(), to.mutable_values().begin());
  }
  if (frozen()) out.freeze();
  return out;
}

Checkpoint Listener::to_checkpoint() const {
  return make_checkpoint("listener", config_, seed_, parameters(), buffers());
}

Listener Listener::from_checkpoint(const Checkpoint& ckpt) {
  Listener l(config_from_checkpoint(ckpt, "listener"), seed_from_checkpoint(ckpt));
  assign_tensors(ckpt, l.parameters());
  assign_tensors(ckpt, l.buffers());
  return l;
}

Speaker::Speaker(const AgentConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const RngStream root = RngStream(seed).split("speaker");
  conv_ = ConvEncoder(config_.conv_blocks, config_.conv_filters, 3, root.split("conv"));
  init_ = Linear(config_.n_images * config_.feature_dim(), config_.gru_layers * config_.hidden_dim,
                 root.split("init"));
  embedding_ = init_rows(config_.vocab_size, config_.embed_dim, 1.0, root.split("embedding"));
  gru_ = Gru(config_.embed_dim, config_.hidden_dim, config_.gru_layers, root.split("gru"));
  out_ = Linear(config_.hidden_dim, config_.vocab_size, root.split("out"));
}

ParamList Speaker::parameters() const {
  ParamList out;
  ParamList unused;
  conv_.collect("conv", out, unused);
  init_.collect("init", out);
  out.push_back({"embedding", embedding_});
  gru_.collect("gru", out);
  out_.collect("out", out);
  return out;
}

ParamList Speaker::buffers() const {
  ParamList params;
  ParamList out;
  conv_.collect("conv", params, out);
  return out;
}

UtteranceBatch Speaker::speak(const GameBatch& games, bool train, const SpeakerConfig& decode,
                              RngStream* rng) const {
  const int batch = games.size();
  const int n = games.n_images;
  if (n != config_.n_images) {
    throw std::invalid_argument("speaker: configured for " + std::to_string(config_.n_images) +
                                " images per game, got " + std::to_string(n));
  }
  if (!rng && decode.mode != DecodeMode::kGreedy) {
    throw std::invalid_argument("speaker: sampling requires an rng");
  }
  const Tensor feats = conv_.forward(games.images, train, 0.0, nullptr);
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(batch) * n);
  for (int b = 0; b < batch; ++b) {
    order.push_back(b * n + games.targets[b]);
    for (int k = 0; k < n; ++k) {
      if (k != games.targets[b]) order.push_back(b * n + k);
    }
  }
  const Tensor joint = ops::reshape(ops::embedding(feats, order),
                                    {batch, static_cast<std::int64_t>(n) * feats.dim(1)});
  const Tensor h0 = ops::tanh(init_.forward(joint));
  std::vector<Tensor> h;
  for (int l = 0; l < config_.gru_layers; ++l) {
    h.push_back(ops::slice(h0, 1, static_cast<std::int64_t>(l) * config_.hidden_dim,
                           static_cast<std::int64_t>(l + 1) * config_.hidden_dim));
  }

  const int vocab = config_.vocab_size;
  std::vector<double> mask_values(static_cast<std::size_t>(vocab), 0.0);
  mask_values[Vocab::kPad] = -std::numeric_limits<double>::infinity();
  mask_values[Vocab::kStart] = -std::numeric_limits<double>::infinity();
  const Tensor mask({vocab}, mask_values);
  // An utterance carries at least one token, so </s> is masked at step 0.
  mask_values[Vocab::kEnd] = -std::numeric_limits<double>::infinity();
  const Tensor first_mask({vocab}, std::move(mask_values));

  UtteranceBatch result;
  result.hard.assign(static_cast<std::size_t>(batch),
                     Utterance{std::vector<int>(static_cast<std::size_t>(config_.max_len),
                                                Vocab::kPad)});
  result.lengths.assign(static_cast<std::size_t>(batch), config_.max_len);
  std::vector<bool> done(static_cast<std::size_t>(batch), false);
  int remaining = batch;

  Tensor x = ops::embedding(embedding_, std::vector<int>(static_cast<std::size_t>(batch),
                                                         Vocab::kStart));
  for (int t = 0; t < config_.max_len && remaining > 0; ++t) {
    h = gru_.step(x, h, 0.0, nullptr);
    const Tensor logits = ops::add(out_.forward(h.back()), t == 0 ? first_mask : mask);
    std::vector<int> ids;
    if (decode.mode == DecodeMode::kSampleSoft) {
      const Tensor y = ops::gumbel_softmax(logits, decode.temperature, decode.straight_through, *rng);
      ids = ops::argmax_last(y);
      result.soft.push_back(y);
      x = ops::matmul(y, embedding_);
    } else {
      if (decode.mode == DecodeMode::kSampleHard) {
        std::vector<double> noisy(logits.values().begin(), logits.values().end());
        for (auto& v : noisy) v += rng->gumbel();
        ids = ops::argmax_last(Tensor(logits.dims(), std::move(noisy)));
      } else {
        ids = ops::argmax_last(logits);
      }
      x = ops::embedding(embedding_, ids);
    }
    for (int b = 0; b < batch; ++b) {
      if (done[b]) continue;
      result.hard[b].ids[t] = ids[b];
      if (ids[b] == Vocab::kEnd) {
        done[b] = true;
        result.lengths[b] = t + 1;
        --remaining;
      }
    }
  }
  return result;
}

Checkpoint Speaker::to_checkpoint() const {
  return make_checkpoint("speaker", config_, seed_, parameters(), buffers());
}

Speaker Speaker::from_checkpoint(const Checkpoint& ckpt) {
  Speaker s(config_from_checkpoint(ckpt, "speaker"), seed_from_checkpoint(ckpt));
  assign_tensors(ckpt, s.parameters());
  assign_tensors(ckpt, s.buffers());
  return s;
}

}  // namespace popcal
