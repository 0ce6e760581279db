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

#ifndef POPCAL_VOCAB_H_
#define POPCAL_VOCAB_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace popcal {

inline constexpr int kDefaultMaxLen = 10;
inline constexpr int kSmallVocabSize = 15;

// Hard utterance: exactly max_len ids. Tokens after the first end id are pad.
struct Utterance {
  std::vector<int> ids;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Token inventory. Ids are dense. The first 15 ids are always the small
// (domain) vocabulary in a fixed order:
//
//   0 <pad>  1 <s>  2 </s>
//   3 red  4 blue  5 green  6 yellow  7 white  8 gray
//   9 circle  10 square  11 rectangle  12 ellipse  13 triangle  14 shape
//
// so captions encode to the same ids under every vocabulary. Ids 3..14 are the
// domain tokens; the three specials are neither domain nor filler. Large
// vocabularies append seeded pronounceable filler strings.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;

  static Vocab small();
  // Throws std::invalid_argument if total_size <= 15.
  static Vocab build_large(int total_size, std::uint64_t seed);

  int size() const { return static_cast<int>(tokens_.size()); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  // Throws std::out_of_range naming the token.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;

  bool is_special(int id) const { return id == kPad || id == kStart || id == kEnd; }
  bool is_domain(int id) const { return id >= 3 && id < kSmallVocabSize; }
  std::vector<int> domain_ids() const;

  // Appends </s> when there is room, then pads to max_len. Throws
  // std::invalid_argument when the input exceeds max_len tokens and
  // std::out_of_range for unknown tokens.
  Utterance encode(const std::vector<std::string>& words, int max_len = kDefaultMaxLen) const;
  // Words before the first </s>, skipping pad/start.
  std::vector<std::string> decode(const Utterance& u) const;
  std::string decode_text(const Utterance& u) const;

  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.seed_ == b.seed_;
  }

 private:
  Vocab(std::vector<std::string> tokens, std::uint64_t seed);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::uint64_t seed_ = 0;
};

// Ids the listener reads: everything up to and including the first </s>.
int utterance_length(std::span<const int> ids, int end_id = Vocab::kEnd);

// Normalises ids to canonical hard form: everything after the first </s>
// becomes pad.
Utterance truncate_at_end(std::vector<int> ids);

// 100 * (domain tokens) / (non-special tokens) over tokens before the first
// </s>, counting occurrences. 0 for utterances with no non-special tokens.
double token_overlap(const Utterance& u, const Vocab& vocab);

}  // namespace popcal

#endif  // POPCAL_VOCAB_H_
