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

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cli.h"
#include "doctest.h"
#include "json.hpp"
#include "popcal/checkpoint.h"
#include "popcal/config.h"
#include "popcal/io.h"
#include "popcal/training.h"
#include "popcal/vocab.h"

namespace fs = std::filesystem;
using popcal::read_file;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "popcal");
  std::ostringstream out, err;
  Result r;
  r.code = popcal::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "popcal-cli-test" / name;
  fs::remove_all(p);
  return p;
}

std::vector<std::string> tiny(const fs::path& root, std::vector<std::string> rest) {
  std::vector<std::string> args = {"--preset", "tiny", "--quiet", "--out", root.string()};
  args.insert(args.end(), rest.begin(), rest.end());
  return args;
}

std::vector<double> values(const popcal::Tensor& t) {
  const auto v = t.values();
  return {v.begin(), v.end()};
}

const char* const kReports[] = {"table1.csv", "fig2.dat", "fig3.dat", "table3.csv"};

}  // namespace

TEST_CASE("gen-data writes one file per split plus a manifest") {
  const fs::path root = fresh_dir("gen");
  const Result r = run(tiny(root, {"gen-data", "--games", "6", "--splits",
                                   "listener:5,val-listener:3,speaker:1", "--seed", "7"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  int files = 0;
  for (const auto& e : fs::directory_iterator(root / "data")) files += e.path().extension() == ".pcw";
  CHECK(files == 9);
  const auto manifest = nlohmann::json::parse(read_file(root / "data" / "manifest.json"));
  CHECK(manifest.at("splits").size() == 9);
  CHECK(manifest.at("splits").at("val-listener-2").at("games") == 6);

  SUBCASE("rerunning elsewhere reproduces the content hashes") {
    const fs::path again = fresh_dir("gen-again");
    REQUIRE(run(tiny(again, {"gen-data", "--games", "6", "--splits",
                             "listener:5,val-listener:3,speaker:1", "--seed", "7"}))
                .code == 0);
    const auto m2 = nlohmann::json::parse(read_file(again / "data" / "manifest.json"));
    CHECK(m2.at("splits") == manifest.at("splits"));
  }
}

TEST_CASE("usage errors exit with code 2") {
  const fs::path root = fresh_dir("usage");
  CHECK(run(tiny(root, {"gen-data", "--games", "0"})).code == 2);
  CHECK(run(tiny(root, {"gen-data", "--splits", "listener:x"})).code == 2);
  CHECK(run({"--out", root.string(), "no-such-command"}).code == 2);
  CHECK(run({"--out", root.string()}).code == 2);
  CHECK(run(tiny(root, {"--set", "speaker.nope=1", "report"})).code == 2);
  CHECK(run(tiny(root, {"--set", "speaker.lr", "report"})).code == 2);
  CHECK(run(tiny(root, {"train-speaker", "--population", "crowd:3"})).code == 2);
  CHECK(run(tiny(root, {"train-speaker", "--seed", "9"})).code == 2);
  CHECK(run({"--preset", "huge", "--out", root.string(), "report"}).code == 2);
  CHECK(run({"--config", (root / "absent.ini").string(), "report"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("report lists missing artifacts and fails") {
  const fs::path root = fresh_dir("missing");
  const Result r = run(tiny(root, {"report"}));
  CHECK(r.code == 1);
  CHECK(r.err.find("missing artifacts") != std::string::npos);
  CHECK(r.err.find("grid-large-single_l0-seed0.json") != std::string::npos);
  CHECK(r.err.find("calibration.json") != std::string::npos);
}

TEST_CASE("training commands need their inputs") {
  const fs::path root = fresh_dir("inputs");
  Result r = run(tiny(root, {"train-listener", "--split", "listener-0"}));
  CHECK(r.code == 1);
  CHECK(r.err.find("listener-0.pcw") != std::string::npos);
  REQUIRE(run(tiny(root, {"gen-data"})).code == 0);
  r = run(tiny(root, {"train-speaker", "--population", "ensemble:2"}));
  CHECK(r.code == 1);
  CHECK(r.err.find("listener-1.ckpt") != std::string::npos);
}

TEST_CASE("train-listener and train-speaker write checkpoints, logs and manifests") {
  const fs::path root = fresh_dir("train");
  REQUIRE(run(tiny(root, {"gen-data"})).code == 0);
  Result r = run(tiny(root, {"train-listener", "--split", "listener-0", "--vocab", "small", "--seed", "1"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(root / "listeners" / "listener-0.ckpt"));
  CHECK(fs::exists(root / "listeners" / "listener-0.log.jsonl"));
  CHECK_FALSE(fs::exists(root / "listeners" / "listener-0.state"));
  const auto ck = popcal::load_checkpoint(root / "listeners" / "listener-0.ckpt");
  CHECK(ck.kind == "listener");
  CHECK(ck.meta.at("pipeline").at("identity").at("seed") == 1);

  r = run(tiny(root, {"train-listener", "--split", "listener-1"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run(tiny(root, {"train-speaker", "--population", "ensemble:2", "--vocab", "large", "--seed", "0"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path dir = root / "speakers" / "large-ensemble-2";
  CHECK(fs::exists(dir / "seed0.ckpt"));
  CHECK(fs::exists(dir / "seed0.log.jsonl"));
  const auto speaker = popcal::load_checkpoint(dir / "seed0.ckpt");
  CHECK(speaker.meta.at("pipeline").at("population_manifest") == "population.json");
  const auto pop = nlohmann::json::parse(read_file(dir / "population.json"));
  CHECK(pop.at("kind") == "ensemble");
  CHECK(pop.at("members").size() == 2);
  CHECK(pop.at("members")[1].at("checkpoint") == "listeners/listener-1.ckpt");
}

TEST_CASE("interrupted training resumes to the uninterrupted result") {
  const fs::path a = fresh_dir("resume-a");
  const fs::path b = fresh_dir("resume-b");
  for (const auto& root : {a, b}) REQUIRE(run(tiny(root, {"gen-data"})).code == 0);

  REQUIRE(run(tiny(a, {"train-listener", "--split", "listener-0"})).code == 0);
  Result r = run(tiny(b, {"train-listener", "--split", "listener-0", "--stop-after-epoch", "1"}));
  CHECK(r.code == 1);
  CHECK(r.err.find("rerun to resume") != std::string::npos);
  CHECK(fs::exists(b / "listeners" / "listener-0.state"));
  CHECK_FALSE(fs::exists(b / "listeners" / "listener-0.ckpt"));
  REQUIRE(run(tiny(b, {"train-listener", "--split", "listener-0"})).code == 0);

  const auto ca = popcal::load_checkpoint(a / "listeners" / "listener-0.ckpt");
  const auto cb = popcal::load_checkpoint(b / "listeners" / "listener-0.ckpt");
  REQUIRE(ca.tensors.size() == cb.tensors.size());
  for (std::size_t i = 0; i < ca.tensors.size(); ++i) {
    CHECK(values(ca.tensors[i].tensor) == values(cb.tensors[i].tensor));
  }
  const auto la = popcal::TrainLog::from_json(ca.meta.at("pipeline").at("log"));
  const auto lb = popcal::TrainLog::from_json(cb.meta.at("pipeline").at("log"));
  CHECK(la.same_metrics(lb));

  for (const auto& root : {a, b}) REQUIRE(run(tiny(root, {"train-listener", "--split", "listener-1"})).code == 0);
  REQUIRE(run(tiny(a, {"train-speaker", "--population", "dropout:2", "--seed", "1"})).code == 0);
  r = run(tiny(b, {"train-speaker", "--population", "dropout:2", "--seed", "1", "--stop-after-epoch", "1"}));
  CHECK(r.code == 1);
  REQUIRE(run(tiny(b, {"train-speaker", "--population", "dropout:2", "--seed", "1"})).code == 0);
  const auto sa = popcal::load_checkpoint(a / "speakers" / "large-dropout-2" / "seed1.ckpt");
  const auto sb = popcal::load_checkpoint(b / "speakers" / "large-dropout-2" / "seed1.ckpt");
  for (std::size_t i = 0; i < sa.tensors.size(); ++i) {
    CHECK(values(sa.tensors[i].tensor) == values(sb.tensors[i].tensor));
  }
}

TEST_CASE("reproduce is byte-identical across runs and worker counts") {
  const fs::path a = fresh_dir("repro-a");
  const fs::path b = fresh_dir("repro-b");
  Result r = run(tiny(a, {"reproduce", "--seed", "3"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run(tiny(b, {"--jobs", "3", "reproduce", "--seed", "3"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string hash = popcal::ExperimentConfig::load(a / "config.ini").hash();
  CHECK(popcal::Vocab::load(a / "vocab" / "small.vocab").size() == popcal::kSmallVocabSize);
  CHECK(popcal::Vocab::load(a / "vocab" / "large.vocab").size() ==
        popcal::ExperimentConfig::load(a / "config.ini").large_size);
  for (const char* f : kReports) {
    const std::string text = read_file(a / "reports" / f);
    CHECK_MESSAGE(text == read_file(b / "reports" / f), f);
    CHECK(text.rfind("# popcal " + std::string(popcal::kVersion) + " config_sha256=" + hash, 0) == 0);
  }

  SUBCASE("table layouts") {
    std::istringstream t1(read_file(a / "reports" / "table1.csv"));
    std::string line;
    std::getline(t1, line);
    std::getline(t1, line);
    CHECK(line == "condition,stat,train_L_train_D,train_L_val_D,val_L_train_D,val_L_val_D,token_overlap");
    int rows = 0;
    while (std::getline(t1, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 6);
    }
    CHECK(rows == 8);  // 4 conditions x {mean, stderr}
    std::istringstream f3(read_file(a / "reports" / "fig3.dat"));
    int points = 0;
    while (std::getline(f3, line)) {
      if (line.empty() || line[0] == '#') continue;
      ++points;
      std::istringstream fields(line);
      std::string kind, cell;
      int n;
      double mean, se;
      CHECK(static_cast<bool>(fields >> kind >> n >> cell >> mean >> se));
    }
    CHECK(points == 2 * 2 * 5);  // kinds x sizes x cells
  }

  SUBCASE("report reruns reproduce the same bytes") {
    const std::string before = read_file(a / "reports" / "table1.csv");
    REQUIRE(run(tiny(a, {"--set", "data.seed=3", "report"})).code == 0);
    CHECK(read_file(a / "reports" / "table1.csv") == before);
    const Result stale = run(tiny(a, {"report"}));
    CHECK(stale.code == 1);
    CHECK(stale.err.find("written under a different config") != std::string::npos);
  }

  SUBCASE("a different seed changes the results") {
    const fs::path c = fresh_dir("repro-c");
    REQUIRE(run(tiny(c, {"reproduce", "--seed", "4"})).code == 0);
    CHECK(read_file(c / "reports" / "table1.csv") != read_file(a / "reports" / "table1.csv"));
  }
}

TEST_CASE("output root comes from POPCAL_OUT unless --out is given") {
  const fs::path env_root = fresh_dir("env");
  ::setenv("POPCAL_OUT", env_root.string().c_str(), 1);
  const Result r = run({"--preset", "tiny", "--quiet", "gen-data"});
  ::unsetenv("POPCAL_OUT");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(env_root / "data" / "manifest.json"));
  CHECK(fs::exists(env_root / "config.ini"));
}

TEST_CASE("config files and --set overrides reach the effective config") {
  const fs::path root = fresh_dir("config");
  fs::create_directories(root);
  popcal::write_file_atomic(root / "exp.ini", "[experiment]\npreset = tiny\n[data]\ngames = 9\n");
  const Result r = run({"--config", (root / "exp.ini").string(), "--set", "data.seed=11", "--quiet",
                        "--out", root.string(), "gen-data"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto c = popcal::ExperimentConfig::load(root / "config.ini");
  CHECK(c.preset == "tiny");
  CHECK(c.games == 9);
  CHECK(c.seed == 11);
  const auto m = nlohmann::json::parse(read_file(root / "data" / "manifest.json"));
  CHECK(m.at("splits").at("listener-0").at("games") == 9);
  CHECK(m.at("splits").at("listener-0").at("seed") == 11);
}
