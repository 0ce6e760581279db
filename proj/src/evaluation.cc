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

#include "popcal/evaluation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "popcal/checkpoint.h"
#include "popcal/io.h"
#include "popcal/ops.h"

namespace popcal {
namespace {

std::vector<double> gaussian_vector(const std::string& key, int dim, double scale) {
  RngStream rng(hash_label(key));
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

void add_into(std::vector<double>& acc, const std::vector<double>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

bool is_low_overlap(const Utterance& u, const Vocab& vocab) {
  const int len = utterance_length(u.ids);
  bool any_word = false;
  for (int t = 0; t < len; ++t) {
    const int id = u.ids[t];
    if (vocab.is_special(id)) continue;
    if (vocab.is_domain(id)) return false;
    any_word = true;
  }
  return any_word;
}

}  // namespace

std::vector<std::size_t> first_games(const DatasetSplit& split, std::size_t count) {
  std::vector<std::size_t> idx(std::min(count, split.games.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<Utterance> speaker_utterances(const Speaker& speaker, const DatasetSplit& split,
                                          std::span<const std::size_t> games, DecodeMode mode,
                                          RngStream* rng, int batch_size) {
  SpeakerConfig decode;
  decode.mode = mode;
  std::vector<Utterance> out;
  out.reserve(games.size());
  for (std::size_t s = 0; s < games.size(); s += batch_size) {
    const auto idx = games.subspan(s, std::min<std::size_t>(batch_size, games.size() - s));
    UtteranceBatch u = speaker.speak(make_batch(split, idx), false, decode, rng);
    for (auto& h : u.hard) out.push_back(std::move(h));
  }
  return out;
}

std::vector<double> population_correct(const Population& pop, const DatasetSplit& split,
                                       std::span<const std::size_t> games,
                                       std::span<const Utterance> utterances,
                                       RngStream* mask_rng, int batch_size) {
  if (games.size() != utterances.size()) {
    throw std::invalid_argument("population_correct: games and utterances differ in count");
  }
  std::vector<double> out;
  out.reserve(games.size());
  for (std::size_t s = 0; s < games.size(); s += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, games.size() - s);
    const GameBatch g = make_batch(split, games.subspan(s, n));
    const auto u = UtteranceBatch::from_hard(
        std::vector<Utterance>(utterances.begin() + s, utterances.begin() + s + n));
    const auto pred = ops::argmax_last(pop.log_probs(g, u, mask_rng));
    for (std::size_t i = 0; i < n; ++i) out.push_back(pred[i] == g.targets[i] ? 1.0 : 0.0);
  }
  return out;
}

MeanStderr bernoulli_mean(std::span<const double> outcomes) {
  MeanStderr m;
  m.count = static_cast<int>(outcomes.size());
  if (outcomes.empty()) return m;
  const double n = static_cast<double>(outcomes.size());
  m.mean = std::accumulate(outcomes.begin(), outcomes.end(), 0.0) / n;
  double var = 0.0;
  for (double x : outcomes) var += (x - m.mean) * (x - m.mean);
  m.se = std::sqrt(var / n / n);
  return m;
}

AccuracyGrid eval_accuracy_grid(const Speaker& speaker, const Population& train_pop,
                                const std::vector<Listener>& val_listeners,
                                const DatasetSplit& train_split, const DatasetSplit& val_split,
                                const Vocab& vocab, const GridOptions& options) {
  if (val_listeners.empty()) throw std::invalid_argument("eval_accuracy_grid: no validation listeners");
  std::vector<std::string> member_hashes;
  for (const auto& l : train_pop.listeners()) member_hashes.push_back(tensors_hash(l.parameters()));
  for (const auto& v : val_listeners) {
    const std::string h = tensors_hash(v.parameters());
    if (std::find(member_hashes.begin(), member_hashes.end(), h) != member_hashes.end()) {
      throw std::invalid_argument("eval_accuracy_grid: validation listener (seed " +
                                  std::to_string(v.seed()) +
                                  ") is also a member of the training population");
    }
  }
  const RngStream root = RngStream(options.seed).split("accuracy-grid");
  AccuracyGrid grid;
  const DatasetSplit* splits[2] = {&train_split, &val_split};
  for (int d = 0; d < 2; ++d) {
    const DatasetSplit& split = *splits[d];
    const auto games = first_games(split, options.max_games);
    RngStream sample = root.split(d == 0 ? "train-d" : "val-d");
    const auto utts = speaker_utterances(speaker, split, games, options.mode, &sample);
    RngStream masks = root.split("masks");
    const auto train_correct = population_correct(train_pop, split, games, utts, &masks);
    std::vector<double> val_correct(games.size(), 0.0);
    for (const auto& l : val_listeners) {
      const auto c = population_correct(Population::single(l), split, games, utts, nullptr);
      for (std::size_t i = 0; i < c.size(); ++i) {
        val_correct[i] += c[i] / static_cast<double>(val_listeners.size());
      }
    }
    (d == 0 ? grid.train_l_train_d : grid.train_l_val_d) = bernoulli_mean(train_correct);
    (d == 0 ? grid.val_l_train_d : grid.val_l_val_d) = bernoulli_mean(val_correct);
    if (d == 1) {
      std::vector<double> overlap;
      overlap.reserve(utts.size());
      for (const auto& u : utts) overlap.push_back(token_overlap(u, vocab));
      grid.token_overlap = mean_stderr(overlap);
    }
  }
  return grid;
}

std::string overlap_level_name(OverlapLevel level) {
  switch (level) {
    case OverlapLevel::kLow:
      return "low";
    case OverlapLevel::kMedium:
      return "medium";
    case OverlapLevel::kHigh:
      return "high";
  }
  return "unknown";
}

namespace {

double mean_overlap(const std::vector<Utterance>& utts, const Vocab& vocab) {
  if (utts.empty()) return 0.0;
  double s = 0.0;
  for (const auto& u : utts) s += token_overlap(u, vocab);
  return s / static_cast<double>(utts.size());
}

}  // namespace

OverlapSet high_overlap_set(const DatasetSplit& split, std::span<const std::size_t> games,
                            const Vocab& vocab, int max_len) {
  OverlapSet set;
  set.level = OverlapLevel::kHigh;
  set.games.assign(games.begin(), games.end());
  for (auto g : games) set.utterances.push_back(vocab.encode(split.games.at(g).caption, max_len));
  set.mean_overlap = mean_overlap(set.utterances, vocab);
  return set;
}

OverlapSet medium_overlap_set(const Speaker& speaker, const DatasetSplit& split,
                              std::span<const std::size_t> games, const Vocab& vocab,
                              RngStream& rng) {
  OverlapSet set;
  set.level = OverlapLevel::kMedium;
  set.games.assign(games.begin(), games.end());
  set.utterances = speaker_utterances(speaker, split, games, DecodeMode::kSampleHard, &rng);
  set.mean_overlap = mean_overlap(set.utterances, vocab);
  return set;
}

OverlapSet low_overlap_set(const Speaker& speaker, const DatasetSplit& split,
                           std::span<const std::size_t> games, const Vocab& vocab, RngStream& rng,
                           int max_draws, std::size_t min_kept) {
  OverlapSet set;
  set.level = OverlapLevel::kLow;
  std::vector<std::size_t> pending(games.begin(), games.end());
  std::vector<std::pair<std::size_t, Utterance>> kept;
  std::size_t drawn = 0;
  for (int draw = 0; draw < max_draws && !pending.empty(); ++draw) {
    const auto utts = speaker_utterances(speaker, split, pending, DecodeMode::kSampleHard, &rng);
    drawn += utts.size();
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (is_low_overlap(utts[i], vocab)) {
        kept.emplace_back(pending[i], utts[i]);
      } else {
        still.push_back(pending[i]);
      }
    }
    pending = std::move(still);
  }
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [g, u] : kept) {
    set.games.push_back(g);
    set.utterances.push_back(std::move(u));
  }
  set.yield = drawn == 0 ? 0.0 : static_cast<double>(kept.size()) / static_cast<double>(drawn);
  set.mean_overlap = mean_overlap(set.utterances, vocab);
  if (set.games.size() < min_kept) {
    std::ostringstream msg;
    msg << "low-overlap filtering kept " << set.games.size() << " of " << games.size()
        << " games (yield " << set.yield << " over " << drawn << " samples), need " << min_kept;
    throw std::runtime_error(msg.str());
  }
  return set;
}

std::vector<CalibrationPoint> calibration_curve(
    const std::vector<std::pair<std::string, const Population*>>& populations,
    const std::vector<OverlapSet>& sets, const DatasetSplit& split, std::uint64_t seed) {
  std::vector<CalibrationPoint> out;
  for (const auto& [kind, pop] : populations) {
    for (const auto& set : sets) {
      if (set.games.empty()) {
        throw std::invalid_argument("calibration_curve: empty " + overlap_level_name(set.level) +
                                    " utterance set");
      }
      RngStream masks = RngStream(seed).split("calibration").split(kind).split(
          overlap_level_name(set.level));
      std::vector<double> h;
      h.reserve(set.games.size());
      for (std::size_t s = 0; s < set.games.size(); s += 64) {
        const std::size_t n = std::min<std::size_t>(64, set.games.size() - s);
        const GameBatch g =
            make_batch(split, std::span<const std::size_t>(set.games).subspan(s, n));
        const auto u = UtteranceBatch::from_hard(std::vector<Utterance>(
            set.utterances.begin() + s, set.utterances.begin() + s + n));
        const auto e = row_entropy(pop->log_probs(g, u, &masks));
        h.insert(h.end(), e.begin(), e.end());
      }
      out.push_back({kind, set.level, mean_stderr(h)});
    }
  }
  return out;
}

double idealized_entropy(OverlapLevel level, int n_images) {
  switch (level) {
    case OverlapLevel::kLow:
      return std::log(static_cast<double>(n_images));
    case OverlapLevel::kHigh:
      return 0.0;
    case OverlapLevel::kMedium:
      break;
  }
  return std::nan("");
}

EmbeddingTable EmbeddingTable::bundled(const Vocab& vocab, int dim) {
  EmbeddingTable t(dim);
  const auto domain = gaussian_vector("popcal-embedding/domain", dim, 1.0);
  const auto colors = gaussian_vector("popcal-embedding/colors", dim, 1.0);
  const auto shapes = gaussian_vector("popcal-embedding/shapes", dim, 1.0);
  for (int id = 0; id < vocab.size(); ++id) {
    if (vocab.is_special(id)) continue;
    const std::string& w = vocab.token(id);
    if (vocab.is_domain(id)) {
      const bool is_color = std::find(kColorNames.begin(), kColorNames.end(), w) != kColorNames.end();
      std::vector<double> v = gaussian_vector("popcal-embedding/word/" + w, dim, 1.0);
      add_into(v, domain);
      add_into(v, is_color ? colors : shapes);
      t.set(w, std::move(v));
    } else {
      t.set(w, gaussian_vector("popcal-embedding/word/" + w, dim, std::sqrt(3.0)));
    }
  }
  return t;
}

void EmbeddingTable::set(const std::string& word, std::vector<double> v) {
  if (static_cast<int>(v.size()) != dim_) {
    throw std::invalid_argument("embedding table: vector for '" + word + "' has dimension " +
                                std::to_string(v.size()) + ", expected " + std::to_string(dim_));
  }
  if (!contains(word)) order_.push_back(word);
  vectors_[word] = std::move(v);
}

std::vector<double> EmbeddingTable::lookup(const std::string& word) const {
  const auto it = vectors_.find(word);
  if (it == vectors_.end()) return std::vector<double>(static_cast<std::size_t>(dim_), 0.0);
  return it->second;
}

EmbeddingTable EmbeddingTable::parse(std::string_view text) {
  EmbeddingTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<double> v;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("embedding table line " + std::to_string(line_no) + ": bad number '" +
                          tok + "'");
      }
    }
    if (v.empty()) {
      throw FormatError("embedding table line " + std::to_string(line_no) + ": no vector for '" +
                        word + "'");
    }
    if (t.dim_ == 0) t.dim_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != t.dim_) {
      throw FormatError("embedding table line " + std::to_string(line_no) + ": dimension " +
                        std::to_string(v.size()) + ", expected " + std::to_string(t.dim_));
    }
    t.set(word, std::move(v));
  }
  if (t.dim_ == 0) throw FormatError("embedding table: no entries");
  return t;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string EmbeddingTable::serialize() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& w : order_) {
    out << w;
    for (double x : vectors_.at(w)) out << ' ' << x;
    out << '\n';
  }
  return out.str();
}

TopicalityRow topicality(const std::string& label, const DatasetSplit& split,
                         std::span<const std::size_t> games, std::span<const Utterance> utterances,
                         const Vocab& vocab, const EmbeddingTable& table) {
  if (games.size() != utterances.size()) {
    throw std::invalid_argument("topicality: games and utterances differ in count");
  }
  const std::size_t dim = static_cast<std::size_t>(table.dim());
  std::vector<double> sums, firsts;
  std::size_t words = 0, found = 0;
  for (std::size_t i = 0; i < games.size(); ++i) {
    std::vector<double> gt(dim, 0.0);
    for (const auto& w : split.games.at(games[i]).caption) add_into(gt, table.lookup(w));
    std::vector<double> sum(dim, 0.0), first(dim, 0.0);
    const auto spoken = vocab.decode(utterances[i]);
    for (std::size_t k = 0; k < spoken.size(); ++k) {
      const auto v = table.lookup(spoken[k]);
      add_into(sum, v);
      if (k == 0) first = v;
      ++words;
      found += table.contains(spoken[k]);
    }
    sums.push_back(distance(gt, sum));
    firsts.push_back(distance(gt, first));
  }
  TopicalityRow row;
  row.speaker = label;
  row.sum_distance = mean_stderr(sums);
  row.first_distance = mean_stderr(firsts);
  row.coverage = words == 0 ? 1.0 : static_cast<double>(found) / static_cast<double>(words);
  return row;
}

}  // namespace popcal
