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

#include "popcal/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>
#include <sstream>
#include <thread>

#include "popcal/checkpoint.h"
#include "popcal/io.h"

namespace popcal {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* const kCells[] = {"train_L_train_D", "train_L_val_D", "val_L_train_D", "val_L_val_D",
                              "token_overlap"};

std::string missing_message(const std::vector<std::string>& missing) {
  std::string msg = "missing artifacts:";
  for (const auto& m : missing) msg += "\n  " + m;
  return msg;
}

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

void remove_state_files(const fs::path& state) {
  std::error_code ec;
  fs::remove(state, ec);
  for (int k = 1; k < 64; ++k) {
    fs::path p = state;
    p += ".retry" + std::to_string(k);
    if (!fs::remove(p, ec)) break;
  }
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json grid_cells(const AccuracyGrid& g) {
  return {{"train_L_train_D", to_json(g.train_l_train_d)},
          {"train_L_val_D", to_json(g.train_l_val_d)},
          {"val_L_train_D", to_json(g.val_l_train_d)},
          {"val_L_val_D", to_json(g.val_l_val_d)},
          {"token_overlap", to_json(g.token_overlap)}};
}

AccuracyGrid grid_from_cells(const json& j) {
  AccuracyGrid g;
  g.train_l_train_d = mean_stderr_from_json(j.at("train_L_train_D"));
  g.train_l_val_d = mean_stderr_from_json(j.at("train_L_val_D"));
  g.val_l_train_d = mean_stderr_from_json(j.at("val_L_train_D"));
  g.val_l_val_d = mean_stderr_from_json(j.at("val_L_val_D"));
  g.token_overlap = mean_stderr_from_json(j.at("token_overlap"));
  return g;
}

// A result file is reused when its recorded inputs match; a matching result
// written under another config hash is re-stamped rather than recomputed.
json cached_result(const fs::path& path, const json& identity, const std::string& config_hash,
                   const std::function<json()>& compute) {
  if (fs::exists(path)) {
    json old = read_json(path);
    if (old.value("identity", json()) == identity) {
      if (old.value("config_sha256", "") != config_hash) {
        old["config_sha256"] = config_hash;
        write_json(path, old);
      }
      return old;
    }
  }
  json j = compute();
  j["version"] = std::string(kVersion);
  j["config_sha256"] = config_hash;
  j["identity"] = identity;
  write_json(path, j);
  return j;
}

bool fresh_result(const fs::path& path, const std::string& config_hash) {
  if (!fs::exists(path)) return false;
  try {
    return read_json(path).value("config_sha256", "") == config_hash;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

MissingArtifacts::MissingArtifacts(std::vector<std::string> missing)
    : std::runtime_error(missing_message(missing)), missing_(std::move(missing)) {}

json to_json(const MeanStderr& m) { return {{"mean", m.mean}, {"se", m.se}, {"count", m.count}}; }

MeanStderr mean_stderr_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("se").get<double>(), j.at("count").get<int>()};
}

void run_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
  for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<SplitRequest> parse_split_requests(const std::string& text, int games) {
  if (games < 1) throw UsageError("--games must be >= 1");
  std::vector<SplitRequest> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    SplitRequest r;
    r.name = item.substr(0, colon);
    r.games = games;
    const bool name_ok = !r.name.empty() && r.name.find_first_not_of(
                                                "abcdefghijklmnopqrstuvwxyz0123456789-_") ==
                                                std::string::npos;
    if (!name_ok) throw UsageError("bad split name in '" + item + "'");
    if (colon != std::string::npos) {
      try {
        std::size_t used = 0;
        r.count = std::stoi(item.substr(colon + 1), &used);
        if (used != item.size() - colon - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw UsageError("bad split count in '" + item + "'");
      }
    }
    if (r.count < 1) throw UsageError("split count must be >= 1 in '" + item + "'");
    out.push_back(r);
  }
  if (out.empty()) throw UsageError("no splits requested");
  return out;
}

json generate_splits(const fs::path& dir, const std::vector<SplitRequest>& requests,
                     std::uint64_t seed, int resolution, int n_images, int jobs) {
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";
  json manifest = {{"version", std::string(kVersion)}, {"splits", json::object()}};
  if (fs::exists(manifest_path)) manifest = read_json(manifest_path);

  struct Todo {
    std::string id;
    int games;
  };
  std::vector<Todo> todo;
  for (const auto& r : requests) {
    for (int i = 0; i < r.count; ++i) {
      const std::string id = r.name + "-" + std::to_string(i);
      const json& splits = manifest["splits"];
      const bool current = splits.contains(id) && splits[id].value("games", -1) == r.games &&
                           splits[id].value("seed", std::uint64_t{0}) == seed &&
                           splits[id].value("resolution", -1) == resolution &&
                           splits[id].value("n_images", -1) == n_images &&
                           fs::exists(dir / (id + ".pcw"));
      if (!current) todo.push_back({id, r.games});
    }
  }
  std::vector<json> entries(todo.size());
  run_jobs(todo.size(), jobs, [&](std::size_t i) {
    const DatasetSplit split = generate_games(todo[i].games, n_images, todo[i].id, seed, resolution);
    save_split(split, dir / (todo[i].id + ".pcw"));
    entries[i] = {{"file", todo[i].id + ".pcw"},     {"games", todo[i].games},
                  {"seed", seed},                    {"resolution", resolution},
                  {"n_images", n_images},            {"sha256", content_hash(split)}};
  });
  for (std::size_t i = 0; i < todo.size(); ++i) manifest["splits"][todo[i].id] = entries[i];
  manifest["version"] = std::string(kVersion);
  write_json(manifest_path, manifest);
  return manifest;
}

std::string Condition::name() const {
  std::string s = std::string(large_vocab ? "large" : "small") + "-" + population_kind_name(kind);
  if (kind != PopulationKind::kSingleL0) s += "-" + std::to_string(n);
  return s;
}

Condition Condition::parse(const std::string& population, const std::string& vocab) {
  Condition c;
  if (vocab == "small") {
    c.large_vocab = false;
  } else if (vocab != "large") {
    throw UsageError("--vocab must be small or large, got '" + vocab + "'");
  }
  const auto colon = population.find(':');
  try {
    c.kind = parse_population_kind(population.substr(0, colon));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (c.kind == PopulationKind::kSingleL0) {
    if (colon != std::string::npos && population.substr(colon + 1) != "1") {
      throw UsageError("single_l0 has exactly one member");
    }
    return c;
  }
  if (colon == std::string::npos) {
    throw UsageError("population '" + population + "' needs a size, e.g. ensemble:10");
  }
  try {
    std::size_t used = 0;
    const std::string num = population.substr(colon + 1);
    c.n = std::stoi(num, &used);
    if (used != num.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw UsageError("bad population size in '" + population + "'");
  }
  if (c.n < 1) throw UsageError("population size must be >= 1");
  if (c.kind == PopulationKind::kEnsemble && c.n == 1) c.kind = PopulationKind::kSingleL0;
  return c;
}

Pipeline::Pipeline(ExperimentConfig config, RunOptions options)
    : config_(std::move(config)),
      options_(std::move(options)),
      small_vocab_(Vocab::small()),
      large_vocab_((config_.validate(), Vocab::build_large(config_.large_size, config_.seed))) {}

fs::path Pipeline::listener_path(const std::string& name) const {
  return options_.root / "listeners" / (name + ".ckpt");
}

fs::path Pipeline::speaker_path(const Condition& c, int seed_index) const {
  return options_.root / "speakers" / c.name() / ("seed" + std::to_string(seed_index) + ".ckpt");
}

fs::path Pipeline::grid_path(const Condition& c, int seed_index) const {
  return options_.root / "results" /
         ("grid-" + c.name() + "-seed" + std::to_string(seed_index) + ".json");
}

fs::path Pipeline::calibration_path() const { return options_.root / "results" / "calibration.json"; }

fs::path Pipeline::topicality_path() const { return options_.root / "results" / "topicality.json"; }

std::vector<std::string> Pipeline::listener_names() const {
  std::vector<std::string> names;
  for (int i = 0; i < config_.listeners; ++i) names.push_back("listener-" + std::to_string(i));
  for (int j = 0; j < config_.val_listeners; ++j) names.push_back("val-listener-" + std::to_string(j));
  return names;
}

std::vector<Condition> Pipeline::table_conditions() const {
  std::vector<Condition> out = {{false, PopulationKind::kSingleL0, 1}, {true, PopulationKind::kSingleL0, 1}};
  if (config_.max_ensemble() > 1) out.push_back(ensemble_condition());
  out.push_back({true, PopulationKind::kDropout, config_.max_dropout()});
  return out;
}

Condition Pipeline::ensemble_condition() const {
  Condition c{true, PopulationKind::kEnsemble, config_.max_ensemble()};
  if (c.n == 1) c.kind = PopulationKind::kSingleL0;
  return c;
}

std::vector<Condition> Pipeline::sweep_conditions(PopulationKind kind) const {
  std::vector<Condition> out;
  const auto& sizes = kind == PopulationKind::kDropout ? config_.dropout_sizes : config_.ensemble_sizes;
  for (int n : sizes) {
    Condition c{true, kind, n};
    if (kind == PopulationKind::kEnsemble && n == 1) c.kind = PopulationKind::kSingleL0;
    out.push_back(c);
  }
  return out;
}

std::vector<Condition> Pipeline::all_conditions() const {
  std::vector<Condition> out;
  auto add = [&](const std::vector<Condition>& cs) {
    for (const auto& c : cs) {
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
  };
  add(table_conditions());
  add(sweep_conditions(PopulationKind::kEnsemble));
  add(sweep_conditions(PopulationKind::kDropout));
  return out;
}

std::uint64_t Pipeline::listener_seed(const std::string& name) const {
  return RngStream(config_.seed).split("listener-init").split(name).next_u64();
}

std::uint64_t Pipeline::speaker_seed(int seed_index) const {
  return RngStream(config_.seed)
      .split("speaker-init")
      .split(static_cast<std::uint64_t>(seed_index))
      .next_u64();
}

void Pipeline::log(const std::string& line) const {
  if (!options_.log) return;
  std::lock_guard<std::mutex> lock(mu_);
  *options_.log << line << std::endl;
}

void Pipeline::write_config() const {
  fs::create_directories(options_.root);
  write_file_atomic(options_.root / "config.ini", "; popcal " + std::string(kVersion) +
                                                      " config_sha256=" + config_hash() + "\n" +
                                                      config_.to_ini());
  small_vocab_.save(options_.root / "vocab" / "small.vocab");
  large_vocab_.save(options_.root / "vocab" / "large.vocab");
}

json Pipeline::gen_data() const {
  std::vector<SplitRequest> req = {{"listener", config_.listeners, config_.games},
                                   {"val-listener", config_.val_listeners, config_.games},
                                   {"speaker", 1, config_.speaker_games},
                                   {"speaker-val", 1, config_.speaker_val_games}};
  log("gen-data: " + data_dir().string());
  return generate_splits(data_dir(), req, config_.seed, config_.resolution, config_.n_images,
                         options_.jobs);
}

std::string Pipeline::split_hash(const std::string& id) const {
  const fs::path manifest = data_dir() / "manifest.json";
  const fs::path file = data_dir() / (id + ".pcw");
  if (!fs::exists(manifest) || !fs::exists(file)) throw MissingArtifacts({file.string()});
  const json m = read_json(manifest);
  const json& entry = m.at("splits").value(id, json());
  if (entry.is_null()) throw MissingArtifacts({file.string() + " (not in manifest)"});
  return entry.at("sha256").get<std::string>();
}

std::shared_ptr<const DatasetSplit> Pipeline::split(const std::string& id) const {
  const fs::path file = data_dir() / (id + ".pcw");
  std::lock_guard<std::mutex> lock(mu_);
  auto it = splits_.find(id);
  if (it != splits_.end()) return it->second;
  if (!fs::exists(file)) throw MissingArtifacts({file.string()});
  auto s = std::make_shared<const DatasetSplit>(load_split(file));
  if (s->resolution != config_.resolution || s->n_images != config_.n_images) {
    throw std::runtime_error(file.string() + " was generated with a different resolution or image count; rerun gen-data");
  }
  splits_[id] = s;
  return s;
}

ListenerTrainResult Pipeline::train_listener(const std::string& name,
                                             std::optional<std::uint64_t> seed_override) const {
  const std::string hash = split_hash(name);
  const AgentConfig agent = config_.agent(kSmallVocabSize);
  const std::uint64_t seed = seed_override.value_or(listener_seed(name));
  const json identity = {{"agent", agent.to_json()},
                         {"train", config_.listener.to_json()},
                         {"split", name},
                         {"split_sha256", hash},
                         {"seed", seed}};
  const fs::path path = listener_path(name);
  if (fs::exists(path)) {
    const Checkpoint c = load_checkpoint(path);
    const json meta = c.meta.value("pipeline", json());
    if (meta.value("identity", json()) == identity) {
      ListenerTrainResult r{Listener::from_checkpoint(c), TrainLog::from_json(meta.at("log")),
                            meta.at("train_accuracy").get<double>(),
                            meta.at("val_accuracy").get<double>(),
                            meta.at("admitted_seed").get<std::uint64_t>(),
                            meta.at("attempts").get<int>(), true};
      log(name + ": up to date (val accuracy " + fixed(r.val_accuracy) + ")");
      return r;
    }
  }

  const DatasetSplit data = load_split(data_dir() / (name + ".pcw"));
  fs::create_directories(path.parent_path());
  fs::path state = path;
  state.replace_extension(".state");
  TrainHooks hooks;
  hooks.state_path = state;
  hooks.stop_after_epoch = options_.stop_after_epoch;
  hooks.on_epoch = [&](const EpochRecord& r) {
    log(name + ": epoch " + std::to_string(r.epoch) + "/" + std::to_string(config_.listener.epochs) +
        " loss " + fixed(r.loss) + " train " + fixed(r.train_accuracy) + " val " +
        fixed(r.val_accuracy));
  };
  ListenerTrainResult r = popcal::train_listener(agent, config_.listener, data, seed, hooks);
  if (!r.completed) {
    throw Interrupted(name + ": stopped after epoch " + std::to_string(options_.stop_after_epoch) +
                      "; rerun to resume");
  }
  Checkpoint c = r.listener.to_checkpoint();
  c.meta["pipeline"] = {{"identity", identity},         {"log", r.log.to_json()},
                        {"train_accuracy", r.train_accuracy}, {"val_accuracy", r.val_accuracy},
                        {"admitted_seed", r.seed},      {"attempts", r.attempts},
                        {"config_sha256", config_hash()}};
  fs::path log_path = path;
  log_path.replace_extension(".log.jsonl");
  write_file_atomic(log_path, r.log.to_jsonl());
  save_checkpoint(c, path);
  remove_state_files(state);
  log(name + ": saved " + path.string() + " (val accuracy " + fixed(r.val_accuracy) + ", " +
      std::to_string(r.attempts) + " attempt(s))");
  return r;
}

void Pipeline::train_listeners(const std::vector<std::string>& names) const {
  run_jobs(names.size(), options_.jobs, [&](std::size_t i) { train_listener(names[i]); });
}

Listener Pipeline::load_listener(const std::string& name, bool large_vocab) const {
  const fs::path path = listener_path(name);
  if (!fs::exists(path)) throw MissingArtifacts({path.string()});
  Listener l = Listener::from_checkpoint(load_checkpoint(path));
  if (large_vocab) l = l.resized(config_.large_size);
  l.freeze();
  return l;
}

Population Pipeline::population(const Condition& c) const {
  std::vector<std::string> names;
  const int members = c.kind == PopulationKind::kEnsemble ? c.n : 1;
  if (members > config_.listeners) {
    throw UsageError("ensemble of " + std::to_string(members) + " needs more than the " +
                     std::to_string(config_.listeners) + " configured listeners");
  }
  std::vector<std::string> missing;
  for (int i = 0; i < members; ++i) {
    names.push_back("listener-" + std::to_string(i));
    if (!fs::exists(listener_path(names.back()))) missing.push_back(listener_path(names.back()).string());
  }
  if (!missing.empty()) throw MissingArtifacts(missing);
  switch (c.kind) {
    case PopulationKind::kSingleL0:
      return Population::single(load_listener(names[0], c.large_vocab));
    case PopulationKind::kDropout:
      return Population::dropout(load_listener(names[0], c.large_vocab), c.n);
    case PopulationKind::kEnsemble: {
      std::vector<Listener> ls;
      for (const auto& n : names) ls.push_back(load_listener(n, c.large_vocab));
      return Population::ensemble(std::move(ls));
    }
  }
  throw std::logic_error("unreachable population kind");
}

namespace {

json population_record(const Population& pop) {
  json j = pop.manifest();
  json members = json::array();
  for (std::size_t i = 0; i < pop.listeners().size(); ++i) {
    members.push_back({{"checkpoint", "listeners/listener-" + std::to_string(i) + ".ckpt"},
                       {"params_sha256", tensors_hash(pop.listeners()[i].parameters())}});
  }
  j["members"] = members;
  return j;
}

}  // namespace

Speaker Pipeline::train_speaker(const Condition& c, int seed_index) const {
  const Population pop = population(c);
  const json pop_record = population_record(pop);
  const AgentConfig agent = config_.agent(vocab(c.large_vocab).size());
  const std::uint64_t seed = speaker_seed(seed_index);
  const json identity = {{"agent", agent.to_json()},
                         {"train", config_.speaker.to_json()},
                         {"population", pop_record},
                         {"split_sha256", split_hash("speaker-0")},
                         {"val_sha256", split_hash("speaker-val-0")},
                         {"seed", seed}};
  const fs::path path = speaker_path(c, seed_index);
  const std::string tag = c.name() + "/seed" + std::to_string(seed_index);
  if (fs::exists(path)) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("pipeline", json()).value("identity", json()) == identity) {
      log(tag + ": up to date");
      return Speaker::from_checkpoint(ck);
    }
  }

  const auto train = split("speaker-0");
  const auto val = split("speaker-val-0");
  fs::create_directories(path.parent_path());
  fs::path state = path;
  state.replace_extension(".state");
  TrainHooks hooks;
  hooks.state_path = state;
  hooks.stop_after_epoch = options_.stop_after_epoch;
  hooks.on_epoch = [&](const EpochRecord& r) {
    log(tag + ": epoch " + std::to_string(r.epoch) + "/" + std::to_string(config_.speaker.epochs) +
        " loss " + fixed(r.loss) + " train " + fixed(r.train_accuracy) + " val " +
        fixed(r.val_accuracy));
  };
  SpeakerTrainResult r =
      popcal::train_speaker(agent, config_.speaker, *train, val.get(), pop, seed, hooks);
  if (!r.completed) {
    throw Interrupted(tag + ": stopped after epoch " + std::to_string(options_.stop_after_epoch) +
                      "; rerun to resume");
  }
  Checkpoint ck = r.speaker.to_checkpoint();
  ck.meta["pipeline"] = {{"identity", identity},
                         {"population_manifest", "population.json"},
                         {"condition", c.name()},
                         {"seed_index", seed_index},
                         {"log", r.log.to_json()},
                         {"config_sha256", config_hash()}};
  write_json(path.parent_path() / "population.json", pop_record);
  fs::path log_path = path;
  log_path.replace_extension(".log.jsonl");
  write_file_atomic(log_path, r.log.to_jsonl());
  save_checkpoint(ck, path);
  remove_state_files(state);
  log(tag + ": saved " + path.string());
  return r.speaker;
}

void Pipeline::train_speakers(const std::vector<Condition>& conditions) const {
  std::vector<std::pair<Condition, int>> jobs;
  for (const auto& c : conditions) {
    for (int k = 0; k < config_.seeds; ++k) jobs.emplace_back(c, k);
  }
  run_jobs(jobs.size(), options_.jobs,
           [&](std::size_t i) { train_speaker(jobs[i].first, jobs[i].second); });
}

Speaker Pipeline::load_speaker(const Condition& c, int seed_index) const {
  const fs::path path = speaker_path(c, seed_index);
  if (!fs::exists(path)) throw MissingArtifacts({path.string()});
  return Speaker::from_checkpoint(load_checkpoint(path));
}

AccuracyGrid Pipeline::evaluate(const Condition& c, int seed_index) const {
  const Speaker speaker = load_speaker(c, seed_index);
  const Population pop = population(c);
  std::vector<Listener> val_listeners;
  json val_hashes = json::array();
  for (int j = 0; j < config_.val_listeners; ++j) {
    val_listeners.push_back(load_listener("val-listener-" + std::to_string(j), c.large_vocab));
    val_hashes.push_back(tensors_hash(val_listeners.back().parameters()));
  }
  GridOptions opts;
  opts.max_games = static_cast<std::size_t>(config_.eval_games);
  opts.mode = DecodeMode::kGreedy;
  opts.seed = RngStream(config_.seed).split("eval").split(c.name()).split(
      static_cast<std::uint64_t>(seed_index)).next_u64();
  const json identity = {{"speaker_sha256", tensors_hash(speaker.parameters())},
                         {"population", population_record(pop)},
                         {"val_listeners", val_hashes},
                         {"train_sha256", split_hash("speaker-0")},
                         {"val_sha256", split_hash("speaker-val-0")},
                         {"max_games", opts.max_games},
                         {"seed", opts.seed}};
  const std::string tag = c.name() + "/seed" + std::to_string(seed_index);
  const json j = cached_result(grid_path(c, seed_index), identity, config_hash(), [&] {
    const auto train = split("speaker-0");
    const auto val = split("speaker-val-0");
    const AccuracyGrid g = eval_accuracy_grid(speaker, pop, val_listeners, *train, *val,
                                              vocab(c.large_vocab), opts);
    log(tag + ": train-L/val-D " + fixed(g.train_l_val_d.mean) + " val-L/val-D " +
        fixed(g.val_l_val_d.mean) + " overlap " + fixed(g.token_overlap.mean) + "%");
    return json{{"condition", c.name()}, {"seed_index", seed_index}, {"cells", grid_cells(g)}};
  });
  return grid_from_cells(j.at("cells"));
}

void Pipeline::evaluate_all(const std::vector<Condition>& conditions) const {
  std::vector<std::pair<Condition, int>> jobs;
  for (const auto& c : conditions) {
    for (int k = 0; k < config_.seeds; ++k) jobs.emplace_back(c, k);
  }
  run_jobs(jobs.size(), options_.jobs,
           [&](std::size_t i) { evaluate(jobs[i].first, jobs[i].second); });
}

json Pipeline::calibrate() const {
  const Condition single{true, PopulationKind::kSingleL0, 1};
  const Condition ensemble = ensemble_condition();
  const Condition dropout{true, PopulationKind::kDropout, config_.max_dropout()};
  const Speaker low_speaker = load_speaker(single, 0);
  const Speaker medium_speaker = load_speaker(ensemble, 0);
  const Population single_pop = population(single);
  const Population ensemble_pop = population(ensemble);
  const Population dropout_pop = population(dropout);
  const json identity = {{"low_speaker", tensors_hash(low_speaker.parameters())},
                         {"medium_speaker", tensors_hash(medium_speaker.parameters())},
                         {"single_l0", population_record(single_pop)},
                         {"ensemble", population_record(ensemble_pop)},
                         {"dropout", population_record(dropout_pop)},
                         {"val_sha256", split_hash("speaker-val-0")},
                         {"games", config_.calibration_games},
                         {"low_max_draws", config_.low_max_draws},
                         {"low_min_kept", config_.low_min_kept},
                         {"seed", config_.seed}};
  return cached_result(calibration_path(), identity, config_hash(), [&] {
    const auto val = split("speaker-val-0");
    const auto games = first_games(*val, static_cast<std::size_t>(config_.calibration_games));
    const RngStream base = RngStream(config_.seed).split("calibration");
    RngStream medium_rng = base.split("medium");
    RngStream low_rng = base.split("low");
    std::vector<OverlapSet> sets;
    sets.push_back(low_overlap_set(low_speaker, *val, games, large_vocab_, low_rng,
                                   config_.low_max_draws,
                                   static_cast<std::size_t>(config_.low_min_kept)));
    sets.push_back(medium_overlap_set(medium_speaker, *val, games, large_vocab_, medium_rng));
    sets.push_back(high_overlap_set(*val, games, large_vocab_, config_.max_len));
    const auto points = calibration_curve(
        {{"single_l0", &single_pop}, {"ensemble", &ensemble_pop}, {"dropout", &dropout_pop}}, sets,
        *val, base.split("masks").next_u64());
    json jsets = json::array();
    for (const auto& s : sets) {
      jsets.push_back({{"level", overlap_level_name(s.level)},
                       {"games", s.games.size()},
                       {"mean_overlap", s.mean_overlap},
                       {"yield", s.yield}});
    }
    json jpoints = json::array();
    for (const auto& p : points) {
      jpoints.push_back({{"kind", p.kind},
                         {"level", overlap_level_name(p.level)},
                         {"entropy", to_json(p.entropy)}});
      log("calibration: " + p.kind + " " + overlap_level_name(p.level) + " entropy " +
          fixed(p.entropy.mean));
    }
    return json{{"sets", jsets},
                {"points", jpoints},
                {"population_sizes",
                 {{"single_l0", 1}, {"ensemble", ensemble_pop.size()}, {"dropout", dropout_pop.size()}}},
                {"idealized",
                 {{"low", idealized_entropy(OverlapLevel::kLow, config_.n_images)},
                  {"high", idealized_entropy(OverlapLevel::kHigh, config_.n_images)}}}};
  });
}

json Pipeline::topicality() const {
  const std::vector<std::pair<std::string, Condition>> speakers = {
      {"limited", {false, PopulationKind::kSingleL0, 1}},
      {"calibrated", ensemble_condition()},
      {"miscalibrated", {true, PopulationKind::kSingleL0, 1}}};
  json hashes = json::object();
  std::map<std::string, std::vector<Speaker>> loaded;
  for (const auto& [label, c] : speakers) {
    json hs = json::array();
    for (int k = 0; k < config_.seeds; ++k) {
      loaded[label].push_back(load_speaker(c, k));
      hs.push_back(tensors_hash(loaded[label].back().parameters()));
    }
    hashes[label] = hs;
  }
  const EmbeddingTable table = EmbeddingTable::bundled(large_vocab_);
  const json identity = {{"speakers", hashes},
                         {"val_sha256", split_hash("speaker-val-0")},
                         {"games", config_.topicality_games},
                         {"table_sha256", sha256_hex(table.serialize())}};
  return cached_result(topicality_path(), identity, config_hash(), [&] {
    const auto val = split("speaker-val-0");
    const auto games = first_games(*val, static_cast<std::size_t>(config_.topicality_games));
    json rows = json::array();
    for (const auto& [label, c] : speakers) {
      std::vector<std::size_t> all_games;
      std::vector<Utterance> all_utts;
      for (const auto& s : loaded[label]) {
        auto utts = speaker_utterances(s, *val, games, DecodeMode::kGreedy, nullptr);
        all_games.insert(all_games.end(), games.begin(), games.end());
        all_utts.insert(all_utts.end(), utts.begin(), utts.end());
      }
      const TopicalityRow row =
          popcal::topicality(label, *val, all_games, all_utts, vocab(c.large_vocab), table);
      rows.push_back({{"speaker", label},
                      {"condition", c.name()},
                      {"sum_distance", to_json(row.sum_distance)},
                      {"first_distance", to_json(row.first_distance)},
                      {"coverage", row.coverage}});
      log("topicality: " + label + " SUM " + fixed(row.sum_distance.mean) + " FIRST " +
          fixed(row.first_distance.mean));
    }
    return json{{"rows", rows}};
  });
}

std::vector<std::string> Pipeline::missing_results() const {
  std::vector<std::string> missing;
  const std::string h = config_hash();
  auto check = [&](const fs::path& p) {
    if (!fs::exists(p)) {
      missing.push_back(p.string());
    } else if (!fresh_result(p, h)) {
      missing.push_back(p.string() + " (written under a different config)");
    }
  };
  for (const auto& c : all_conditions()) {
    for (int k = 0; k < config_.seeds; ++k) check(grid_path(c, k));
  }
  check(calibration_path());
  check(topicality_path());
  return missing;
}

GridSummary Pipeline::summarize(const Condition& c) const {
  GridSummary s{c, {}};
  std::map<std::string, std::vector<double>> per_seed;
  std::vector<std::string> missing;
  for (int k = 0; k < config_.seeds; ++k) {
    const fs::path p = grid_path(c, k);
    if (!fresh_result(p, config_hash())) {
      missing.push_back(p.string());
      continue;
    }
    const json cells = read_json(p).at("cells");
    for (const char* cell : kCells) per_seed[cell].push_back(cells.at(cell).at("mean").get<double>());
  }
  if (!missing.empty()) throw MissingArtifacts(missing);
  for (const char* cell : kCells) s.cells[cell] = mean_stderr(per_seed[cell]);
  return s;
}

void Pipeline::report() const {
  const auto missing = missing_results();
  if (!missing.empty()) throw MissingArtifacts(missing);
  const std::string header =
      "# popcal " + std::string(kVersion) + " config_sha256=" + config_hash() + "\n";

  std::string table1 = header + "condition,stat,train_L_train_D,train_L_val_D,val_L_train_D,"
                                "val_L_val_D,token_overlap\n";
  for (const auto& c : table_conditions()) {
    const GridSummary s = summarize(c);
    for (const char* stat : {"mean", "stderr"}) {
      table1 += c.name() + "," + stat;
      for (const char* cell : kCells) {
        const MeanStderr& m = s.cells.at(cell);
        table1 += "," + fixed(std::string(stat) == "mean" ? m.mean : m.se);
      }
      table1 += "\n";
    }
  }

  const json cal = read_json(calibration_path());
  std::string fig2 = header + "# kind level x y yerr\n";
  const std::map<std::string, int> level_x = {{"low", 0}, {"medium", 1}, {"high", 2}};
  for (const auto& p : cal.at("points")) {
    const std::string level = p.at("level").get<std::string>();
    fig2 += p.at("kind").get<std::string>() + " " + level + " " + std::to_string(level_x.at(level)) +
            " " + fixed(p.at("entropy").at("mean").get<double>()) + " " +
            fixed(p.at("entropy").at("se").get<double>()) + "\n";
  }
  fig2 += "idealized low 0 " + fixed(cal.at("idealized").at("low").get<double>()) + " " + fixed(0.0) + "\n";
  fig2 += "idealized high 2 " + fixed(cal.at("idealized").at("high").get<double>()) + " " + fixed(0.0) + "\n";

  std::string fig3 = header + "# kind n cell mean stderr\n";
  for (PopulationKind kind : {PopulationKind::kEnsemble, PopulationKind::kDropout}) {
    for (const auto& c : sweep_conditions(kind)) {
      const GridSummary s = summarize(c);
      for (const char* cell : kCells) {
        fig3 += population_kind_name(kind) + " " + std::to_string(c.n) + " " + cell + " " +
                fixed(s.cells.at(cell).mean) + " " + fixed(s.cells.at(cell).se) + "\n";
      }
    }
  }

  const json top = read_json(topicality_path());
  std::string table3 = header + "speaker,sum_distance,sum_distance_se,first_distance,first_distance_se,coverage\n";
  for (const auto& r : top.at("rows")) {
    table3 += r.at("speaker").get<std::string>() + "," +
              fixed(r.at("sum_distance").at("mean").get<double>()) + "," +
              fixed(r.at("sum_distance").at("se").get<double>()) + "," +
              fixed(r.at("first_distance").at("mean").get<double>()) + "," +
              fixed(r.at("first_distance").at("se").get<double>()) + "," +
              fixed(r.at("coverage").get<double>()) + "\n";
  }

  fs::create_directories(report_dir());
  write_file_atomic(report_dir() / "table1.csv", table1);
  write_file_atomic(report_dir() / "fig2.dat", fig2);
  write_file_atomic(report_dir() / "fig3.dat", fig3);
  write_file_atomic(report_dir() / "table3.csv", table3);
  log("report: " + report_dir().string());
}

void Pipeline::reproduce() const {
  write_config();
  gen_data();
  train_listeners(listener_names());
  train_speakers(all_conditions());
  evaluate_all(all_conditions());
  calibrate();
  topicality();
  report();
}

}  // namespace popcal
