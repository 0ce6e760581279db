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

#ifndef POPCAL_RNG_H_
#define POPCAL_RNG_H_

#include <cstdint>
#include <string_view>

namespace popcal {

// Counter-based random stream. Draw i of a stream is a pure function of
// (seed, i), so any stream can be re-created from its seed and position, and
// independent sub-streams are derived by hashing a label into the seed.
// Only integer arithmetic is used, so sequences are identical on every
// platform.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-ctr-v1";

  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  std::string_view algorithm() const { return kAlgorithm; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform on the open interval (0, 1); safe to take log of.
  double open_uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard Gumbel draw, -log(-log(U)).
  double gumbel();
  // Standard normal via Box-Muller; consumes two draws.
  double normal();

  // Independent child streams. Splitting does not advance the parent.
  RngStream split(std::string_view label) const;
  RngStream split(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// SplitMix64 finalizer; a bijective avalanche mix of 64 bits.
std::uint64_t mix64(std::uint64_t x);
// FNV-1a over bytes, used to key sub-streams by name.
std::uint64_t hash_label(std::string_view label);

}  // namespace popcal

#endif  // POPCAL_RNG_H_
