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

#include "cli.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "popcal/checkpoint.h"
#include "popcal/config.h"
#include "popcal/io.h"
#include "popcal/pipeline.h"

namespace popcal::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::string out;
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  int jobs = 1;
  bool quiet = false;
};

fs::path output_root(const Globals& g) {
  if (!g.out.empty()) return g.out;
  if (const char* env = std::getenv("POPCAL_OUT"); env && *env) return env;
  return "popcal-out";
}

ExperimentConfig base_config(const Globals& g) {
  ExperimentConfig c;
  if (g.config_file.empty()) {
    c = ExperimentConfig::preset_named(g.preset.empty() ? "desk" : g.preset);
  } else if (g.preset.empty()) {
    c = ExperimentConfig::load(g.config_file);
  } else {
    c = ExperimentConfig::preset_named(g.preset);
    c.apply_ini(read_file(g.config_file));
  }
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return c;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_grid(std::ostream& out, const std::string& tag, const AccuracyGrid& g) {
  out << tag << " train_L_train_D=" << fmt(g.train_l_train_d.mean)
      << " train_L_val_D=" << fmt(g.train_l_val_d.mean)
      << " val_L_train_D=" << fmt(g.val_l_train_d.mean)
      << " val_L_val_D=" << fmt(g.val_l_val_d.mean)
      << " token_overlap=" << fmt(g.token_overlap.mean) << "\n";
}

std::vector<int> seed_indices(const ExperimentConfig& c, const std::optional<int>& seed) {
  if (seed) {
    if (*seed < 0 || *seed >= c.seeds) {
      throw UsageError("--seed must be a replicate index in [0, " + std::to_string(c.seeds) + ")");
    }
    return {*seed};
  }
  std::vector<int> out;
  for (int k = 0; k < c.seeds; ++k) out.push_back(k);
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train speakers against single, ensemble and dropout listener populations."};
  app.name(args.empty() ? "popcal" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));

  Globals g;
  app.add_option("--out", g.out, "Output root (default: $POPCAL_OUT, else ./popcal-out)");
  app.add_option("--config", g.config_file, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Base preset: desk, paper or tiny");
  app.add_option("--set", g.sets, "Override one config key, e.g. --set speaker.epochs=10")
      ->allow_extra_args(false);
  app.add_option("--jobs", g.jobs, "Worker threads for independent jobs")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "No progress output");

  int stop_after_epoch = 0;
  auto hidden_stop = [&](CLI::App* sub) {
    sub->add_option("--stop-after-epoch", stop_after_epoch)->group("");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate dataset splits and their manifest");
  std::optional<int> gen_games;
  std::string gen_splits;
  std::optional<std::uint64_t> gen_seed;
  std::optional<int> gen_resolution, gen_images;
  gen->add_option("--games", gen_games, "Games per split");
  gen->add_option("--splits", gen_splits, "name:count list, e.g. listener:5,val-listener:3,speaker:1");
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--resolution", gen_resolution, "Image side in pixels");
  gen->add_option("--images", gen_images, "Images per game");

  auto* tl = app.add_subcommand("train-listener", "Pretrain listeners on captions");
  std::vector<std::string> tl_splits;
  std::string tl_vocab = "small";
  std::optional<std::uint64_t> tl_seed;
  tl->add_option("--split", tl_splits, "Split id(s) to train on (default: all configured)");
  tl->add_option("--vocab", tl_vocab, "small, or large to also write a resized checkpoint")
      ->check(CLI::IsMember({"small", "large"}));
  tl->add_option("--seed", tl_seed, "Initialisation seed (default: derived from data.seed)");
  hidden_stop(tl);

  auto* ts = app.add_subcommand("train-speaker", "Train speakers against a listener population");
  std::string ts_pop = "single_l0";
  std::string ts_vocab = "large";
  std::optional<int> ts_seed;
  ts->add_option("--population", ts_pop, "single_l0, ensemble:N or dropout:N");
  ts->add_option("--vocab", ts_vocab, "small or large")->check(CLI::IsMember({"small", "large"}));
  ts->add_option("--seed", ts_seed, "Replicate index (default: all)");
  hidden_stop(ts);

  auto* ev = app.add_subcommand("eval", "Accuracy grids (and topicality when no population is given)");
  std::optional<std::string> ev_pop;
  std::string ev_vocab = "large";
  std::optional<int> ev_seed;
  ev->add_option("--population", ev_pop, "single_l0, ensemble:N or dropout:N");
  ev->add_option("--vocab", ev_vocab, "small or large")->check(CLI::IsMember({"small", "large"}));
  ev->add_option("--seed", ev_seed, "Replicate index (default: all)");

  auto* cal = app.add_subcommand("calibrate", "Population entropy per overlap level");

  auto* sw = app.add_subcommand("sweep", "Train and evaluate speakers across population sizes");
  std::string sw_kind = "all";
  std::vector<int> sw_sizes;
  sw->add_option("--kind", sw_kind, "ensemble, dropout or all")
      ->check(CLI::IsMember({"ensemble", "dropout", "all"}));
  sw->add_option("--sizes", sw_sizes, "Population sizes, e.g. 1,10")->delimiter(',');
  hidden_stop(sw);

  auto* rep = app.add_subcommand("report", "Write table1.csv, fig2.dat, fig3.dat, table3.csv");

  auto* repro = app.add_subcommand("reproduce", "Run the whole pipeline and write the reports");
  std::optional<std::uint64_t> repro_seed;
  repro->add_option("--seed", repro_seed, "Experiment seed (data.seed)");
  hidden_stop(repro);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    ExperimentConfig config = base_config(g);
    if (*gen) {
      if (gen_games && *gen_games < 1) throw UsageError("--games must be >= 1");
      if (gen_seed) config.seed = *gen_seed;
      if (gen_resolution) config.resolution = *gen_resolution;
      if (gen_images) config.n_images = *gen_images;
      if (gen_games) config.games = *gen_games;
    }
    if (*sw && !sw_sizes.empty()) {
      if (sw_kind != "dropout") config.ensemble_sizes = sw_sizes;
      if (sw_kind != "ensemble") config.dropout_sizes = sw_sizes;
    }
    if (*repro && repro_seed) config.seed = *repro_seed;
    config.validate();

    RunOptions opts;
    opts.root = output_root(g);
    opts.jobs = g.jobs;
    opts.stop_after_epoch = stop_after_epoch;
    opts.log = g.quiet ? nullptr : &err;
    const Pipeline p(config, opts);
    p.write_config();

    if (*gen) {
      nlohmann::json manifest;
      if (!gen_splits.empty()) {
        manifest = generate_splits(p.data_dir(), parse_split_requests(gen_splits, config.games),
                                   config.seed, config.resolution, config.n_images, g.jobs);
      } else {
        manifest = p.gen_data();
      }
      for (const auto& [id, entry] : manifest.at("splits").items()) {
        out << id << " games=" << entry.at("games").get<int>()
            << " sha256=" << entry.at("sha256").get<std::string>() << "\n";
      }
      out << "manifest " << (p.data_dir() / "manifest.json").string() << "\n";
    } else if (*tl) {
      const std::vector<std::string> names = tl_splits.empty() ? p.listener_names() : tl_splits;
      std::vector<ListenerTrainResult> results(names.size());
      run_jobs(names.size(), g.jobs, [&](std::size_t i) {
        results[i] = p.train_listener(names[i], tl_seed);
        if (tl_vocab == "large") {
          fs::path large = p.listener_path(names[i]);
          large.replace_extension(".large.ckpt");
          save_checkpoint(results[i].listener.resized(config.large_size).to_checkpoint(), large);
        }
      });
      for (std::size_t i = 0; i < names.size(); ++i) {
        out << names[i] << " train_accuracy=" << fmt(results[i].train_accuracy)
            << " val_accuracy=" << fmt(results[i].val_accuracy)
            << " attempts=" << results[i].attempts << " checkpoint=" << p.listener_path(names[i]).string()
            << "\n";
      }
    } else if (*ts) {
      const Condition c = Condition::parse(ts_pop, ts_vocab);
      const auto seeds = seed_indices(config, ts_seed);
      run_jobs(seeds.size(), g.jobs, [&](std::size_t i) { p.train_speaker(c, seeds[i]); });
      for (int k : seeds) {
        out << c.name() << " seed=" << k << " checkpoint=" << p.speaker_path(c, k).string()
            << " population=" << (p.speaker_path(c, k).parent_path() / "population.json").string()
            << "\n";
      }
    } else if (*ev) {
      if (ev_pop) {
        const Condition c = Condition::parse(*ev_pop, ev_vocab);
        const auto seeds = seed_indices(config, ev_seed);
        std::vector<AccuracyGrid> grids(seeds.size());
        run_jobs(seeds.size(), g.jobs, [&](std::size_t i) { grids[i] = p.evaluate(c, seeds[i]); });
        for (std::size_t i = 0; i < seeds.size(); ++i) {
          print_grid(out, c.name() + " seed=" + std::to_string(seeds[i]), grids[i]);
        }
      } else {
        p.evaluate_all(p.all_conditions());
        for (const auto& c : p.all_conditions()) {
          for (int k = 0; k < config.seeds; ++k) {
            print_grid(out, c.name() + " seed=" + std::to_string(k), p.evaluate(c, k));
          }
        }
        for (const auto& row : p.topicality().at("rows")) {
          out << "topicality " << row.at("speaker").get<std::string>()
              << " sum=" << fmt(row.at("sum_distance").at("mean").get<double>())
              << " first=" << fmt(row.at("first_distance").at("mean").get<double>()) << "\n";
        }
      }
    } else if (*cal) {
      for (const auto& pt : p.calibrate().at("points")) {
        out << pt.at("kind").get<std::string>() << " " << pt.at("level").get<std::string>()
            << " entropy=" << fmt(pt.at("entropy").at("mean").get<double>()) << "\n";
      }
    } else if (*sw) {
      std::vector<Condition> conds;
      if (sw_kind != "dropout") {
        for (const auto& c : p.sweep_conditions(PopulationKind::kEnsemble)) conds.push_back(c);
      }
      if (sw_kind != "ensemble") {
        for (const auto& c : p.sweep_conditions(PopulationKind::kDropout)) conds.push_back(c);
      }
      p.train_speakers(conds);
      p.evaluate_all(conds);
      for (const auto& c : conds) {
        const GridSummary s = p.summarize(c);
        out << c.name() << " val_L_val_D=" << fmt(s.cells.at("val_L_val_D").mean) << "+-"
            << fmt(s.cells.at("val_L_val_D").se)
            << " token_overlap=" << fmt(s.cells.at("token_overlap").mean) << "\n";
      }
    } else if (*rep || *repro) {
      if (*repro) {
        p.reproduce();
      } else {
        p.report();
      }
      for (const char* f : {"table1.csv", "fig2.dat", "fig3.dat", "table3.csv"}) {
        out << (p.report_dir() / f).string() << "\n";
      }
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace popcal::cli
