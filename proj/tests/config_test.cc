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

#include <set>
#include <string>

#include "doctest.h"
#include "popcal/config.h"
#include "popcal/pipeline.h"

using namespace popcal;

TEST_CASE("canonical ini round-trips every preset") {
  for (const char* name : {"desk", "paper", "tiny"}) {
    const ExperimentConfig c = ExperimentConfig::preset_named(name);
    CHECK_NOTHROW(c.validate());
    const ExperimentConfig back = ExperimentConfig::from_ini(c.to_ini());
    CHECK(back.to_ini() == c.to_ini());
    CHECK(back.hash() == c.hash());
  }
}

TEST_CASE("desk preset carries the desk-scale defaults") {
  const ExperimentConfig c = ExperimentConfig::preset_named("desk");
  CHECK(c.resolution == 32);
  CHECK(c.games == 2000);
  CHECK(c.conv_blocks == 4);
  CHECK(c.conv_filters == 16);
  CHECK(c.embed_dim == 64);
  CHECK(c.hidden_dim == 64);
  CHECK(c.large_size == 2000);
  CHECK(c.listener.epochs == 30);
  CHECK(c.listener.lr == 0.01);
  CHECK(c.speaker.lr == 0.002);
  CHECK(ExperimentConfig::preset_named("paper").speaker.lr == 0.001);
  CHECK(c.speaker.batch_size == 32);
  CHECK(c.seeds == 3);
  CHECK(c.max_ensemble() == 10);
  CHECK(c.max_dropout() == 10);
  CHECK(c.agent(c.large_size).feature_dim() == 64);
}

TEST_CASE("hash identifies inputs") {
  ExperimentConfig a = ExperimentConfig::preset_named("desk");
  ExperimentConfig b = ExperimentConfig::preset_named("desk");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 64);
  b.set("speaker.lr", "0.003");
  CHECK(a.hash() != b.hash());
  b.set("speaker.lr", "0.002");
  CHECK(a.hash() == b.hash());
  CHECK(ExperimentConfig::preset_named("tiny").hash() != a.hash());
}

TEST_CASE("every key appears once in the canonical text") {
  const auto keys = config_keys();
  CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == keys.size());
  const std::string ini = ExperimentConfig::preset_named("desk").to_ini();
  for (const auto& k : keys) {
    const std::string leaf = k.substr(k.find('.') + 1);
    CHECK_MESSAGE(ini.find("\n" + leaf + " = ") != std::string::npos, k);
  }
}

TEST_CASE("ini files apply the preset first, then their keys") {
  const ExperimentConfig c = ExperimentConfig::from_ini(
      "; a comment\n"
      "[experiment]\n"
      "preset = tiny\n"
      "seeds = 4\n"
      "ensemble_sizes = 1, 2\n"
      "\n"
      "[speaker]\n"
      "straight_through = false\n"
      "temperature = 0.5\n");
  CHECK(c.preset == "tiny");
  CHECK(c.resolution == 16);
  CHECK(c.seeds == 4);
  CHECK(c.ensemble_sizes == std::vector<int>{1, 2});
  CHECK_FALSE(c.speaker.straight_through);
  CHECK(c.speaker.temperature == 0.5);
}

TEST_CASE("bad keys and values are usage errors") {
  ExperimentConfig c;
  CHECK_THROWS_AS(c.set("speaker.nope", "1"), UsageError);
  CHECK_THROWS_AS(c.set("data.games", "many"), UsageError);
  CHECK_THROWS_AS(c.set("data.games", "12x"), UsageError);
  CHECK_THROWS_AS(c.set("speaker.straight_through", "maybe"), UsageError);
  CHECK_THROWS_AS(c.set("experiment.ensemble_sizes", ""), UsageError);
  CHECK_THROWS_AS(ExperimentConfig::preset_named("huge"), UsageError);
  CHECK_THROWS_AS(ExperimentConfig::from_ini("[data]\ngames\n"), UsageError);
  CHECK_THROWS_AS(ExperimentConfig::from_ini("[data]\nwidth = 3\n"), UsageError);
}

TEST_CASE("validation names the offending key") {
  ExperimentConfig c;
  c.ensemble_sizes = {1, 11};
  try {
    c.validate();
    FAIL("expected a usage error");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("experiment.ensemble_sizes") != std::string::npos);
  }
  ExperimentConfig d;
  d.games = 0;
  CHECK_THROWS_AS(d.validate(), UsageError);
  ExperimentConfig e;
  e.resolution = 40;  // not divisible by 2^4
  CHECK_THROWS_AS(e.validate(), UsageError);
  ExperimentConfig f;
  f.dropout = 0.0;
  CHECK_THROWS_AS(f.validate(), UsageError);
}

TEST_CASE("conditions parse and name canonically") {
  CHECK(Condition::parse("single_l0", "small").name() == "small-single_l0");
  CHECK(Condition::parse("ensemble:10", "large").name() == "large-ensemble-10");
  CHECK(Condition::parse("dropout:1", "large").name() == "large-dropout-1");
  CHECK(Condition::parse("ensemble:1", "large") == Condition::parse("single_l0", "large"));
  CHECK_THROWS_AS(Condition::parse("ensemble", "large"), UsageError);
  CHECK_THROWS_AS(Condition::parse("ensemble:0", "large"), UsageError);
  CHECK_THROWS_AS(Condition::parse("ensemble:x", "large"), UsageError);
  CHECK_THROWS_AS(Condition::parse("crowd:3", "large"), UsageError);
  CHECK_THROWS_AS(Condition::parse("single_l0", "medium"), UsageError);
}

TEST_CASE("split requests") {
  const auto r = parse_split_requests("listener:5,val-listener:3,speaker:1", 10);
  REQUIRE(r.size() == 3);
  CHECK(r[0].name == "listener");
  CHECK(r[0].count == 5);
  CHECK(r[1].count == 3);
  CHECK(r[2].games == 10);
  CHECK(parse_split_requests("speaker", 4)[0].count == 1);
  CHECK_THROWS_AS(parse_split_requests("listener:5", 0), UsageError);
  CHECK_THROWS_AS(parse_split_requests("listener:0", 5), UsageError);
  CHECK_THROWS_AS(parse_split_requests("listener:2x", 5), UsageError);
  CHECK_THROWS_AS(parse_split_requests("Bad/Name:1", 5), UsageError);
}

TEST_CASE("job pool runs every index and rethrows failures") {
  for (int jobs : {1, 3}) {
    std::vector<int> hit(20, 0);
    run_jobs(hit.size(), jobs, [&](std::size_t i) { hit[i] = static_cast<int>(i) + 1; });
    for (std::size_t i = 0; i < hit.size(); ++i) CHECK(hit[i] == static_cast<int>(i) + 1);
    CHECK_THROWS_AS(run_jobs(5, jobs,
                             [](std::size_t i) {
                               if (i == 2) throw std::runtime_error("job 2");
                             }),
                    std::runtime_error);
  }
}
