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

#include "popcal/training.h"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "popcal/checkpoint.h"
#include "popcal/io.h"
#include "popcal/ops.h"
#include "popcal/optim.h"

namespace popcal {
namespace {

using Clock = std::chrono::steady_clock;

const Vocab& small_vocab() {
  static const Vocab v = Vocab::small();
  return v;
}

UtteranceBatch caption_batch(const DatasetSplit& split, std::span<const std::size_t> idx,
                             int max_len) {
  std::vector<Utterance> u;
  u.reserve(idx.size());
  for (auto i : idx) u.push_back(small_vocab().encode(split.games.at(i).caption, max_len));
  return UtteranceBatch::from_hard(std::move(u));
}

void shuffle(std::vector<std::size_t>& v, RngStream rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

std::string data_key(const DatasetSplit& s) {
  return s.split_id + "/" + std::to_string(s.seed) + "/" + std::to_string(s.games.size()) + "/" +
         std::to_string(s.resolution) + "/" + std::to_string(s.n_images);
}

Tensor target_nll(const Tensor& log_probs, std::span<const int> targets) {
  return ops::scale(ops::mean(ops::gather_last(log_probs, targets)), -1.0);
}

void require_finite(double loss, int epoch, int batch) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error("non-finite loss " + std::to_string(loss) + " at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

// Full optimisation state in a checkpoint container.
struct TrainState {
  int epoch = 0;
  TrainLog log;
};

void save_state(const std::filesystem::path& path, const std::string& kind,
                const nlohmann::json& identity, const ParamList& params, const ParamList& buffers,
                const AdamState& adam, const TrainState& state) {
  Checkpoint c;
  c.kind = kind;
  c.meta["identity"] = identity;
  c.meta["epoch"] = state.epoch;
  c.meta["adam_step"] = adam.step_count;
  c.meta["log"] = state.log.to_json();
  for (const auto& p : params) c.tensors.push_back({p.name, p.tensor.detach()});
  for (const auto& b : buffers) c.tensors.push_back({b.name, b.tensor.detach()});
  if (adam.step_count > 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.tensors.push_back({"adam.m." + params[i].name,
                           Tensor(params[i].tensor.dims(), adam.first_moment[i])});
      c.tensors.push_back({"adam.v." + params[i].name,
                           Tensor(params[i].tensor.dims(), adam.second_moment[i])});
    }
  }
  save_checkpoint(c, path);
}

bool load_state(const std::filesystem::path& path, const std::string& kind,
                const nlohmann::json& identity, const ParamList& params, const ParamList& buffers,
                AdamState& adam, TrainState& state) {
  if (path.empty() || !std::filesystem::exists(path)) return false;
  const Checkpoint c = load_checkpoint(path);
  // A state file from other inputs is stale; start over and overwrite it.
  if (c.kind != kind || c.meta.value("identity", nlohmann::json()) != identity) return false;
  assign_tensors(c, params);
  assign_tensors(c, buffers);
  state.epoch = c.meta.at("epoch").get<int>();
  state.log = TrainLog::from_json(c.meta.at("log"));
  adam.step_count = c.meta.at("adam_step").get<std::int64_t>();
  adam.first_moment.clear();
  adam.second_moment.clear();
  if (adam.step_count > 0) {
    for (const auto& p : params) {
      const auto m = c.get("adam.m." + p.name).values();
      const auto v = c.get("adam.v." + p.name).values();
      adam.first_moment.emplace_back(m.begin(), m.end());
      adam.second_moment.emplace_back(v.begin(), v.end());
    }
  }
  return true;
}

std::filesystem::path attempt_path(const std::filesystem::path& base, int attempt) {
  if (base.empty() || attempt == 0) return base;
  std::filesystem::path p = base;
  p += ".retry" + std::to_string(attempt);
  return p;
}

std::uint64_t attempt_seed(std::uint64_t seed, int attempt) {
  if (attempt == 0) return seed;
  return RngStream(seed).split("retry").split(static_cast<std::uint64_t>(attempt)).next_u64();
}

struct Attempt {
  Listener listener;
  TrainLog log;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  bool completed = true;
};

Attempt listener_attempt(const AgentConfig& config, const ListenerTrainConfig& train,
                         const DatasetSplit& split, std::uint64_t seed,
                         const std::filesystem::path& state_path, const TrainHooks& hooks) {
  const std::size_t total = split.games.size();
  const auto n_val = static_cast<std::size_t>(std::llround(train.val_fraction * total));
  if (total == 0 || n_val >= total) {
    throw std::invalid_argument("train_listener: split '" + split.split_id +
                                "' too small for a train/validation partition");
  }
  std::vector<std::size_t> train_idx(total - n_val), val_idx(n_val);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), total - n_val);

  Attempt a;
  a.listener = Listener(config, seed);
  ParamList params = a.listener.parameters();
  const ParamList buffers = a.listener.buffers();
  AdamState adam = make_adam(train.lr);
  const nlohmann::json identity = {{"config", config.to_json()}, {"train", train.to_json()},
                                   {"seed", seed}, {"data", data_key(split)}};
  TrainState state;
  load_state(state_path, "listener-train", identity, params, buffers, adam, state);
  a.log = state.log;

  const RngStream base = RngStream(seed).split("listener-train");
  for (int epoch = state.epoch + 1; epoch <= train.epochs; ++epoch) {
    if (hooks.stop_after_epoch > 0 && epoch > hooks.stop_after_epoch) {
      a.completed = false;
      return a;
    }
    const auto start = Clock::now();
    const RngStream erng = base.split(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order = train_idx;
    shuffle(order, erng.split("shuffle"));
    double loss_sum = 0.0;
    int correct = 0;
    int batch_no = 0;
    for (std::size_t s = 0; s < order.size(); s += train.batch_size, ++batch_no) {
      const std::span<const std::size_t> idx(order.data() + s,
                                             std::min<std::size_t>(train.batch_size, order.size() - s));
      const GameBatch g = make_batch(split, idx);
      const UtteranceBatch u = caption_batch(split, idx, config.max_len);
      RngStream masks = erng.split("dropout").split(static_cast<std::uint64_t>(batch_no));
      const Tensor lp = ops::log_softmax(a.listener.logits(g, u, true, &masks));
      const Tensor loss = target_nll(lp, g.targets);
      require_finite(loss.item(), epoch, batch_no);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      correct += count_correct(lp, g.targets);
      loss.backward();
      adam_step(params, adam);
    }
    EpochRecord r;
    r.epoch = epoch;
    r.loss = loss_sum / static_cast<double>(order.size());
    r.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    r.val_accuracy = listener_accuracy(a.listener, split, val_idx);
    r.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    a.log.epochs.push_back(r);
    state.epoch = epoch;
    state.log = a.log;
    if (!state_path.empty()) save_state(state_path, "listener-train", identity, params, buffers, adam, state);
    if (hooks.on_epoch) hooks.on_epoch(r);
  }
  a.train_accuracy = listener_accuracy(a.listener, split, train_idx);
  a.val_accuracy = a.log.epochs.empty() ? listener_accuracy(a.listener, split, val_idx)
                                        : a.log.epochs.back().val_accuracy;
  return a;
}

}  // namespace

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss},
          {"train_accuracy", train_accuracy},
          {"val_accuracy", val_accuracy},
          {"wall_seconds", wall_seconds}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.loss = j.at("loss").get<double>();
  r.train_accuracy = j.at("train_accuracy").get<double>();
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) out += e.to_json().dump() + "\n";
  return out;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : epochs) j.push_back(e.to_json());
  return j;
}

TrainLog TrainLog::from_json(const nlohmann::json& j) {
  TrainLog log;
  for (const auto& e : j) log.epochs.push_back(EpochRecord::from_json(e));
  return log;
}

bool TrainLog::same_metrics(const TrainLog& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.loss != b.loss || a.train_accuracy != b.train_accuracy ||
        a.val_accuracy != b.val_accuracy) {
      return false;
    }
  }
  return true;
}

nlohmann::json ListenerTrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size}, {"lr", lr},
          {"val_fraction", val_fraction}, {"gate", gate},         {"max_attempts", max_attempts}};
}

nlohmann::json SpeakerTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"temperature", temperature},
          {"straight_through", straight_through},
          {"log_val_games", log_val_games}};
}

int count_correct(const Tensor& scores, std::span<const int> targets) {
  const auto pred = ops::argmax_last(scores);
  if (pred.size() != targets.size()) {
    throw std::invalid_argument("count_correct: " + std::to_string(pred.size()) + " rows but " +
                                std::to_string(targets.size()) + " targets");
  }
  int n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == targets[i];
  return n;
}

double listener_accuracy(const Listener& listener, const DatasetSplit& split,
                         std::span<const std::size_t> indices, int batch_size) {
  if (indices.empty()) return 0.0;
  int correct = 0;
  for (std::size_t s = 0; s < indices.size(); s += batch_size) {
    const auto idx = indices.subspan(s, std::min<std::size_t>(batch_size, indices.size() - s));
    const GameBatch g = make_batch(split, idx);
    const UtteranceBatch u = caption_batch(split, idx, listener.config().max_len);
    correct += count_correct(listener.logits(g, u, false, nullptr).detach(), g.targets);
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

ListenerTrainResult train_listener(const AgentConfig& config, const ListenerTrainConfig& train,
                                   const DatasetSplit& split, std::uint64_t seed,
                                   const TrainHooks& hooks) {
  if (split.games.empty()) throw std::invalid_argument("train_listener: empty split");
  if (train.max_attempts < 1 || train.epochs < 0 || train.batch_size < 1) {
    throw std::invalid_argument("train_listener: invalid training configuration");
  }
  std::ostringstream failures;
  for (int attempt = 0; attempt < train.max_attempts; ++attempt) {
    const std::uint64_t s = attempt_seed(seed, attempt);
    Attempt a = listener_attempt(config, train, split, s, attempt_path(hooks.state_path, attempt), hooks);
    ListenerTrainResult result{a.listener, a.log, a.train_accuracy, a.val_accuracy, s, attempt + 1,
                               a.completed};
    if (!a.completed) return result;
    if (a.train_accuracy >= train.gate && a.val_accuracy >= train.gate) return result;
    failures << " attempt " << attempt + 1 << " (seed " << s << "): train " << a.train_accuracy
             << ", val " << a.val_accuracy << ";";
  }
  throw GateFailure("listener on split '" + split.split_id + "' missed the " +
                    std::to_string(train.gate) + " accuracy gate:" + failures.str());
}

SpeakerTrainResult train_speaker(const AgentConfig& config, const SpeakerTrainConfig& train,
                                 const DatasetSplit& split, const DatasetSplit* val,
                                 const Population& population, std::uint64_t seed,
                                 const TrainHooks& hooks) {
  if (split.games.empty()) throw std::invalid_argument("train_speaker: empty split");
  if (!population.frozen()) {
    throw std::logic_error("train_speaker: population listeners must be frozen");
  }
  SpeakerTrainResult res;
  res.speaker = Speaker(config, seed);
  ParamList params = res.speaker.parameters();
  const ParamList buffers = res.speaker.buffers();
  AdamState adam = make_adam(train.lr);
  nlohmann::json identity = {{"config", config.to_json()},
                             {"train", train.to_json()},
                             {"seed", seed},
                             {"data", data_key(split)},
                             {"population", population.manifest()}};
  if (val) identity["val_data"] = data_key(*val);
  TrainState state;
  load_state(hooks.state_path, "speaker-train", identity, params, buffers, adam, state);
  res.log = state.log;

  std::vector<std::size_t> val_idx;
  if (val) {
    val_idx.resize(std::min<std::size_t>(val->games.size(),
                                         static_cast<std::size_t>(std::max(train.log_val_games, 0))));
    std::iota(val_idx.begin(), val_idx.end(), 0);
  }
  SpeakerConfig soft;
  soft.mode = DecodeMode::kSampleSoft;
  soft.temperature = train.temperature;
  soft.straight_through = train.straight_through;
  SpeakerConfig greedy;
  greedy.mode = DecodeMode::kGreedy;

  std::vector<std::size_t> all(split.games.size());
  std::iota(all.begin(), all.end(), 0);
  const RngStream base = RngStream(seed).split("speaker-train");
  for (int epoch = state.epoch + 1; epoch <= train.epochs; ++epoch) {
    if (hooks.stop_after_epoch > 0 && epoch > hooks.stop_after_epoch) {
      res.completed = false;
      return res;
    }
    const auto start = Clock::now();
    const RngStream erng = base.split(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order = all;
    shuffle(order, erng.split("shuffle"));
    double loss_sum = 0.0;
    int correct = 0;
    int batch_no = 0;
    for (std::size_t s = 0; s < order.size(); s += train.batch_size, ++batch_no) {
      const std::span<const std::size_t> idx(order.data() + s,
                                             std::min<std::size_t>(train.batch_size, order.size() - s));
      const GameBatch g = make_batch(split, idx);
      RngStream gumbel = erng.split("gumbel").split(static_cast<std::uint64_t>(batch_no));
      RngStream masks = erng.split("masks").split(static_cast<std::uint64_t>(batch_no));
      const UtteranceBatch u = res.speaker.speak(g, true, soft, &gumbel);
      const Tensor lp = population.log_probs(g, u, &masks);
      const Tensor loss = target_nll(lp, g.targets);
      require_finite(loss.item(), epoch, batch_no);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      correct += count_correct(lp, g.targets);
      loss.backward();
      for (const auto& l : population.listeners()) {
        for (const auto& p : l.parameters()) {
          if (p.tensor.has_grad()) {
            throw std::logic_error("train_speaker: listener parameter '" + p.name +
                                   "' received a gradient");
          }
        }
      }
      adam_step(params, adam);
    }
    EpochRecord r;
    r.epoch = epoch;
    r.loss = loss_sum / static_cast<double>(order.size());
    r.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val_idx.empty()) {
      RngStream masks = RngStream(seed).split("val-masks");
      int vc = 0;
      for (std::size_t s = 0; s < val_idx.size(); s += 64) {
        const auto idx = std::span<const std::size_t>(val_idx).subspan(
            s, std::min<std::size_t>(64, val_idx.size() - s));
        const GameBatch g = make_batch(*val, idx);
        const UtteranceBatch u = res.speaker.speak(g, false, greedy, nullptr);
        vc += count_correct(population.log_probs(g, u, &masks).detach(), g.targets);
      }
      r.val_accuracy = static_cast<double>(vc) / static_cast<double>(val_idx.size());
    }
    r.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    res.log.epochs.push_back(r);
    state.epoch = epoch;
    state.log = res.log;
    if (!hooks.state_path.empty()) {
      save_state(hooks.state_path, "speaker-train", identity, params, buffers, adam, state);
    }
    if (hooks.on_epoch) hooks.on_epoch(r);
  }
  return res;
}

MeanStderr mean_stderr(std::span<const double> values) {
  MeanStderr m;
  m.count = static_cast<int>(values.size());
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    const double k = static_cast<double>(values.size());
    m.se = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
  }
  return m;
}

std::map<std::string, MeanStderr> run_replicates(int n_seeds,
                                                 const std::function<Metrics(int)>& run) {
  if (n_seeds < 1) throw std::invalid_argument("run_replicates: n_seeds must be >= 1");
  std::map<std::string, std::vector<double>> values;
  for (int r = 0; r < n_seeds; ++r) {
    for (const auto& [k, v] : run(r)) values[k].push_back(v);
  }
  std::map<std::string, MeanStderr> out;
  for (const auto& [k, v] : values) out[k] = mean_stderr(v);
  return out;
}

}  // namespace popcal
