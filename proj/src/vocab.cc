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

#include "popcal/vocab.h"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "popcal/io.h"
#include "popcal/rng.h"
#include "popcal/worldgen.h"

namespace popcal {

namespace {

std::vector<std::string> small_tokens() {
  std::vector<std::string> t{"<pad>", "<s>", "</s>"};
  for (auto c : kColorNames) t.emplace_back(c);
  for (auto s : kShapeNames) t.emplace_back(s);
  t.emplace_back(kShapeWord);
  return t;
}

constexpr std::string_view kOnsets[] = {"b", "br", "c", "ch", "d", "dr", "f", "g", "gr", "h",
                                        "j", "k", "l", "m", "n", "p", "pr", "qu", "r", "s",
                                        "sh", "st", "t", "tr", "v", "w", "z"};
constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "io", "ou"};
constexpr std::string_view kCodas[] = {"", "", "", "n", "r", "s", "t", "x", "ck", "m"};

std::string filler_word(RngStream& rng) {
  const int syllables = 1 + static_cast<int>(rng.below(3));
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += kOnsets[rng.below(std::size(kOnsets))];
    w += kVowels[rng.below(std::size(kVowels))];
    w += kCodas[rng.below(std::size(kCodas))];
  }
  return w;
}

constexpr std::string_view kHeader = "popcal-vocab v1";
constexpr std::string_view kDomainMarker = "#domain";

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens, std::uint64_t seed)
    : tokens_(std::move(tokens)), seed_(seed) {
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("Vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::small() { return Vocab(small_tokens(), 0); }

Vocab Vocab::build_large(int total_size, std::uint64_t seed) {
  if (total_size <= kSmallVocabSize) {
    throw std::invalid_argument("build_large: total_size must exceed " +
                                std::to_string(kSmallVocabSize) + ", got " +
                                std::to_string(total_size));
  }
  auto tokens = small_tokens();
  std::unordered_set<std::string> used(tokens.begin(), tokens.end());
  RngStream rng = RngStream(seed).split("filler-tokens");
  while (static_cast<int>(tokens.size()) < total_size) {
    std::string w = filler_word(rng);
    if (used.insert(w).second) tokens.push_back(std::move(w));
  }
  return Vocab(std::move(tokens), seed);
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw std::out_of_range("unknown token '" + std::string(token) + "'");
  return it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

std::vector<int> Vocab::domain_ids() const {
  std::vector<int> ids;
  for (int i = 3; i < kSmallVocabSize; ++i) ids.push_back(i);
  return ids;
}

Utterance Vocab::encode(const std::vector<std::string>& words, int max_len) const {
  if (static_cast<int>(words.size()) > max_len) {
    throw std::invalid_argument("encode: " + std::to_string(words.size()) +
                                " tokens exceed max length " + std::to_string(max_len));
  }
  Utterance u;
  u.ids.assign(static_cast<std::size_t>(max_len), kPad);
  for (std::size_t i = 0; i < words.size(); ++i) u.ids[i] = id(words[i]);
  if (static_cast<int>(words.size()) < max_len) u.ids[words.size()] = kEnd;
  return u;
}

std::vector<std::string> Vocab::decode(const Utterance& u) const {
  std::vector<std::string> out;
  for (int id : u.ids) {
    if (id == kEnd) break;
    if (id == kPad || id == kStart) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocab::decode_text(const Utterance& u) const {
  std::string s;
  for (const auto& w : decode(u)) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

std::string Vocab::serialize() const {
  std::ostringstream os;
  os << kHeader << " size=" << size() << " seed=" << seed_ << '\n';
  for (const auto& t : tokens_) os << t << '\n';
  os << kDomainMarker << '\n';
  for (int id : domain_ids()) os << id << '\n';
  return os.str();
}

Vocab Vocab::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind(kHeader, 0) != 0) {
    throw FormatError("vocab: bad header line");
  }
  int declared = -1;
  std::uint64_t seed = 0;
  std::istringstream hs(line.substr(kHeader.size()));
  std::string field;
  while (hs >> field) {
    if (field.rfind("size=", 0) == 0) declared = std::stoi(field.substr(5));
    if (field.rfind("seed=", 0) == 0) seed = std::stoull(field.substr(5));
  }
  std::vector<std::string> tokens;
  bool in_domain = false;
  std::vector<int> domain;
  while (std::getline(in, line)) {
    if (line == kDomainMarker) {
      in_domain = true;
      continue;
    }
    if (in_domain) {
      if (!line.empty()) domain.push_back(std::stoi(line));
    } else {
      tokens.push_back(line);
    }
  }
  if (static_cast<int>(tokens.size()) != declared) {
    throw FormatError("vocab: header declares " + std::to_string(declared) + " tokens, found " +
                      std::to_string(tokens.size()));
  }
  Vocab v(std::move(tokens), seed);
  const auto expected_tokens = small_tokens();
  if (v.size() < kSmallVocabSize ||
      !std::equal(expected_tokens.begin(), expected_tokens.end(), v.tokens_.begin())) {
    throw FormatError("vocab: first 15 tokens must be the domain inventory");
  }
  if (domain != v.domain_ids()) throw FormatError("vocab: domain id section does not match inventory");
  return v;
}

void Vocab::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Vocab Vocab::load(const std::filesystem::path& path) { return parse(read_file(path)); }

int utterance_length(std::span<const int> ids, int end_id) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == end_id) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(ids.size());
}

Utterance truncate_at_end(std::vector<int> ids) {
  bool ended = false;
  for (int& id : ids) {
    if (ended) id = Vocab::kPad;
    if (id == Vocab::kEnd) ended = true;
  }
  return Utterance{std::move(ids)};
}

double token_overlap(const Utterance& u, const Vocab& vocab) {
  int domain = 0, counted = 0;
  for (int id : u.ids) {
    if (id == Vocab::kEnd) break;
    if (vocab.is_special(id)) continue;
    ++counted;
    domain += vocab.is_domain(id) ? 1 : 0;
  }
  return counted == 0 ? 0.0 : 100.0 * domain / counted;
}

}  // namespace popcal
