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

#include "popcal/config.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "popcal/io.h"

namespace popcal {
namespace {

// Calls f(key, field) for every field in canonical order.
template <class Config, class F>
void visit(Config& c, F&& f) {
  f("data.resolution", c.resolution);
  f("data.n_images", c.n_images);
  f("data.games", c.games);
  f("data.speaker_games", c.speaker_games);
  f("data.speaker_val_games", c.speaker_val_games);
  f("data.seed", c.seed);
  f("data.listeners", c.listeners);
  f("data.val_listeners", c.val_listeners);
  f("model.conv_blocks", c.conv_blocks);
  f("model.conv_filters", c.conv_filters);
  f("model.embed_dim", c.embed_dim);
  f("model.hidden_dim", c.hidden_dim);
  f("model.gru_layers", c.gru_layers);
  f("model.max_len", c.max_len);
  f("model.dropout", c.dropout);
  f("vocab.large_size", c.large_size);
  f("listener.epochs", c.listener.epochs);
  f("listener.batch_size", c.listener.batch_size);
  f("listener.lr", c.listener.lr);
  f("listener.val_fraction", c.listener.val_fraction);
  f("listener.gate", c.listener.gate);
  f("listener.max_attempts", c.listener.max_attempts);
  f("speaker.epochs", c.speaker.epochs);
  f("speaker.batch_size", c.speaker.batch_size);
  f("speaker.lr", c.speaker.lr);
  f("speaker.temperature", c.speaker.temperature);
  f("speaker.straight_through", c.speaker.straight_through);
  f("speaker.log_val_games", c.speaker.log_val_games);
  f("experiment.preset", c.preset);
  f("experiment.seeds", c.seeds);
  f("experiment.ensemble_sizes", c.ensemble_sizes);
  f("experiment.dropout_sizes", c.dropout_sizes);
  f("experiment.eval_games", c.eval_games);
  f("experiment.calibration_games", c.calibration_games);
  f("experiment.low_max_draws", c.low_max_draws);
  f("experiment.low_min_kept", c.low_min_kept);
  f("experiment.topicality_games", c.topicality_games);
}

std::string format(const std::string& v) { return v; }
std::string format(int v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string format(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw UsageError("invalid value '" + value + "' for " + key);
}

std::string trim(std::string s) {
  const auto ws = [](unsigned char ch) { return std::isspace(ch) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, text);
  return v;
}

void parse_into(const std::string&, const std::string& text, std::string& out) { out = trim(text); }
void parse_into(const std::string& key, const std::string& text, int& out) {
  out = parse_number<int>(key, text);
}
void parse_into(const std::string& key, const std::string& text, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, text);
}
void parse_into(const std::string& key, const std::string& text, double& out) {
  out = parse_number<double>(key, text);
}
void parse_into(const std::string& key, const std::string& text, bool& out) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") {
    out = true;
  } else if (s == "false" || s == "0") {
    out = false;
  } else {
    bad_value(key, text);
  }
}
void parse_into(const std::string& key, const std::string& text, std::vector<int>& out) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(parse_number<int>(key, item));
  if (v.empty()) bad_value(key, text);
  out = std::move(v);
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw UsageError(key + " " + what);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  ExperimentConfig c;
  visit(c, [&](const char* key, auto&) { keys.emplace_back(key); });
  return keys;
}

ExperimentConfig ExperimentConfig::preset_named(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "paper") {
    c.resolution = 64;
    c.games = 15000;
    c.speaker_games = 15000;
    c.speaker_val_games = 1000;
    c.listeners = 30;
    c.conv_filters = 64;
    c.embed_dim = 512;
    c.hidden_dim = 100;
    c.large_size = 51000;
    c.listener.epochs = 100;
    c.listener.gate = 0.92;
    c.speaker.epochs = 100;
    c.speaker.lr = 0.001;
    c.seeds = 10;
    c.ensemble_sizes = {1, 10, 20, 30};
    c.dropout_sizes = {1, 10, 20, 30};
    return c;
  }
  if (name == "tiny") {
    c.resolution = 16;
    c.games = 64;
    c.speaker_games = 48;
    c.speaker_val_games = 32;
    c.listeners = 2;
    c.val_listeners = 1;
    c.conv_blocks = 2;
    c.conv_filters = 4;
    c.embed_dim = 8;
    c.hidden_dim = 8;
    c.large_size = 200;
    c.listener.epochs = 2;
    c.listener.gate = 0.0;
    c.listener.max_attempts = 1;
    c.speaker.epochs = 2;
    c.speaker.log_val_games = 16;
    c.seeds = 2;
    c.ensemble_sizes = {1, 2};
    c.dropout_sizes = {1, 2};
    c.eval_games = 32;
    c.calibration_games = 32;
    c.low_max_draws = 10;
    c.low_min_kept = 1;
    c.topicality_games = 32;
    return c;
  }
  throw UsageError("unknown preset '" + name + "' (expected desk, paper or tiny)");
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  visit(*this, [&](const char* k, auto& field) {
    if (key == k) {
      parse_into(key, value, field);
      found = true;
    }
  });
  if (!found) throw UsageError("unknown config key '" + key + "'");
}

void ExperimentConfig::apply_ini(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw UsageError("config key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (full != "experiment.preset") set(full, value.data());
    }
  }
}

ExperimentConfig ExperimentConfig::from_ini(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig c = preset_named(trim(tree.get<std::string>("experiment.preset", "desk")));
  c.apply_ini(text);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw UsageError("cannot read config " + path.string() + ": " + e.what());
  }
  return from_ini(text);
}

std::string ExperimentConfig::to_ini() const {
  std::string out;
  std::string current;
  visit(*this, [&](const char* key, const auto& field) {
    const std::string k(key);
    const auto dot = k.find('.');
    const std::string section = k.substr(0, dot);
    if (section != current) {
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
      current = section;
    }
    out += k.substr(dot + 1) + " = " + format(field) + "\n";
  });
  return out;
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_ini()); }

void ExperimentConfig::validate() const {
  preset_named(preset);
  require(resolution >= 16, "data.resolution", "must be >= 16");
  require(n_images >= 2, "data.n_images", "must be >= 2");
  require(games >= 1, "data.games", "must be >= 1");
  require(speaker_games >= 1, "data.speaker_games", "must be >= 1");
  require(speaker_val_games >= 1, "data.speaker_val_games", "must be >= 1");
  require(listeners >= 1, "data.listeners", "must be >= 1");
  require(val_listeners >= 1, "data.val_listeners", "must be >= 1");
  require(large_size > kSmallVocabSize, "vocab.large_size",
          "must exceed " + std::to_string(kSmallVocabSize));
  require(dropout > 0.0 && dropout < 1.0, "model.dropout",
          "must be in (0, 1) so dropout populations exist");
  require(listener.epochs >= 1, "listener.epochs", "must be >= 1");
  require(listener.batch_size >= 1, "listener.batch_size", "must be >= 1");
  require(listener.lr > 0.0, "listener.lr", "must be > 0");
  require(listener.val_fraction > 0.0 && listener.val_fraction < 1.0, "listener.val_fraction",
          "must be in (0, 1)");
  require(listener.gate >= 0.0 && listener.gate <= 1.0, "listener.gate", "must be in [0, 1]");
  require(listener.max_attempts >= 1, "listener.max_attempts", "must be >= 1");
  require(speaker.epochs >= 1, "speaker.epochs", "must be >= 1");
  require(speaker.batch_size >= 1, "speaker.batch_size", "must be >= 1");
  require(speaker.lr > 0.0, "speaker.lr", "must be > 0");
  require(speaker.temperature > 0.0, "speaker.temperature", "must be > 0");
  require(speaker.log_val_games >= 0, "speaker.log_val_games", "must be >= 0");
  require(seeds >= 1, "experiment.seeds", "must be >= 1");
  for (int n : ensemble_sizes) {
    require(n >= 1 && n <= listeners, "experiment.ensemble_sizes",
            "entries must be in [1, data.listeners]");
  }
  for (int n : dropout_sizes) require(n >= 1, "experiment.dropout_sizes", "entries must be >= 1");
  require(eval_games >= 1, "experiment.eval_games", "must be >= 1");
  require(calibration_games >= 1, "experiment.calibration_games", "must be >= 1");
  require(low_max_draws >= 1, "experiment.low_max_draws", "must be >= 1");
  require(low_min_kept >= 1, "experiment.low_min_kept", "must be >= 1");
  require(topicality_games >= 1, "experiment.topicality_games", "must be >= 1");
  try {
    agent(large_size).validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("model: ") + e.what());
  }
}

AgentConfig ExperimentConfig::agent(int vocab_size) const {
  AgentConfig a;
  a.resolution = resolution;
  a.n_images = n_images;
  a.conv_blocks = conv_blocks;
  a.conv_filters = conv_filters;
  a.embed_dim = embed_dim;
  a.hidden_dim = hidden_dim;
  a.gru_layers = gru_layers;
  a.max_len = max_len;
  a.vocab_size = vocab_size;
  a.dropout = dropout;
  return a;
}

int ExperimentConfig::max_ensemble() const {
  return *std::max_element(ensemble_sizes.begin(), ensemble_sizes.end());
}

int ExperimentConfig::max_dropout() const {
  return *std::max_element(dropout_sizes.begin(), dropout_sizes.end());
}

}  // namespace popcal
