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

#include <filesystem>
#include <set>

#include "doctest.h"
#include "popcal/io.h"
#include "popcal/rng.h"
#include "popcal/vocab.h"

using namespace popcal;

TEST_CASE("small vocab inventory") {
  auto v = Vocab::small();
  CHECK(v.size() == 15);
  CHECK(v.domain_ids().size() == 12);
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kStart) == "<s>");
  CHECK(v.token(Vocab::kEnd) == "</s>");
  for (int id = 0; id < v.size(); ++id) CHECK(v.is_domain(id) == !v.is_special(id));
  std::set<std::string> unique(v.tokens().begin(), v.tokens().end());
  CHECK(unique.size() == 15);
}

TEST_CASE("large vocab construction") {
  auto v = Vocab::build_large(2000, 7);
  CHECK(v.size() == 2000);
  CHECK(v.domain_ids().size() == 12);
  CHECK(v == Vocab::build_large(2000, 7));
  CHECK_FALSE(v == Vocab::build_large(2000, 8));
  CHECK_THROWS_AS(Vocab::build_large(15, 1), std::invalid_argument);
  CHECK_THROWS_AS(Vocab::build_large(3, 1), std::invalid_argument);

  auto small = Vocab::small();
  for (int id = 0; id < small.size(); ++id) CHECK(v.token(id) == small.token(id));
  const std::vector<std::string> caption{"red", "circle"};
  CHECK(v.encode(caption) == small.encode(caption));
  for (int id = 15; id < v.size(); ++id) {
    CHECK_FALSE(v.is_domain(id));
    CHECK_FALSE(v.is_special(id));
  }
}

TEST_CASE("encode / decode") {
  auto v = Vocab::small();
  auto u = v.encode({"red", "circle"});
  CHECK(u.ids.size() == 10);
  CHECK(u.ids[0] == v.id("red"));
  CHECK(u.ids[1] == v.id("circle"));
  CHECK(u.ids[2] == Vocab::kEnd);
  for (int i = 3; i < 10; ++i) CHECK(u.ids[i] == Vocab::kPad);
  CHECK(v.decode(u) == std::vector<std::string>{"red", "circle"});
  CHECK(v.decode_text(u) == "red circle");

  auto empty = v.encode({});
  CHECK(empty.ids[0] == Vocab::kEnd);
  CHECK(v.decode(empty).empty());

  std::vector<std::string> ten(10, "red");
  CHECK(v.decode(v.encode(ten)) == ten);
  CHECK(utterance_length(v.encode(ten).ids) == 10);
  CHECK_THROWS_AS(v.encode(std::vector<std::string>(11, "red")), std::invalid_argument);
  CHECK_THROWS_AS(v.encode({"purple"}), std::out_of_range);
  CHECK(utterance_length(u.ids) == 3);
  CHECK(utterance_length(empty.ids) == 1);
}

TEST_CASE("encode/decode round trip on random sequences") {
  auto v = Vocab::build_large(300, 2);
  RngStream rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> words(rng.below(11));
    for (auto& w : words) w = v.token(3 + static_cast<int>(rng.below(297)));
    auto u = v.encode(words);
    CHECK(v.decode(u) == words);
    CHECK(truncate_at_end(u.ids) == u);
  }
}

TEST_CASE("token_overlap examples") {
  auto small = Vocab::small();
  auto large = Vocab::build_large(2000, 7);
  CHECK(token_overlap(small.encode({"red", "circle"}), small) == 100.0);
  CHECK(token_overlap(large.encode({"gray", "gray", "gray"}), large) == 100.0);

  const std::string rect = large.token(500);
  CHECK(token_overlap(large.encode({rect, rect, rect, rect}), large) == 0.0);
  CHECK(token_overlap(large.encode({large.token(20), large.token(21), large.token(22)}), large) == 0.0);
  CHECK(token_overlap(large.encode({"red", rect}), large) == 50.0);
  CHECK(token_overlap(large.encode({}), large) == 0.0);
  // Tokens after </s> are ignored.
  Utterance tail{{small.id("red"), Vocab::kEnd, 600, 600, 0, 0, 0, 0, 0, 0}};
  CHECK(token_overlap(tail, large) == 100.0);
}

TEST_CASE("token_overlap is bounded and 100 iff all counted tokens are domain") {
  auto v = Vocab::build_large(100, 4);
  RngStream rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> ids(10);
    for (auto& id : ids) id = static_cast<int>(rng.below(100));
    auto u = truncate_at_end(ids);
    const double o = token_overlap(u, v);
    CHECK((o >= 0.0 && o <= 100.0));
    bool all_domain = true, any_counted = false;
    for (int id : u.ids) {
      if (id == Vocab::kEnd) break;
      if (v.is_special(id)) continue;
      any_counted = true;
      all_domain = all_domain && v.is_domain(id);
    }
    CHECK((o == 100.0) == (any_counted && all_domain));
  }
}

TEST_CASE("vocab file round trip and validation") {
  auto v = Vocab::build_large(120, 5);
  auto path = std::filesystem::temp_directory_path() / "popcal_vocab_test.txt";
  v.save(path);
  CHECK(Vocab::load(path) == v);
  const auto text = v.serialize();
  CHECK(text.rfind("popcal-vocab v1 size=120 seed=5\n", 0) == 0);
  CHECK(text.find("#domain\n3\n") != std::string::npos);
  CHECK_THROWS_AS(Vocab::parse("nonsense\n"), FormatError);
  CHECK_THROWS_AS(Vocab::parse("popcal-vocab v1 size=3 seed=0\na\nb\nc\n#domain\n"), FormatError);
}
