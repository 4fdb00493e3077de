/* Copyright 2026 The DDB Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ddb/harness/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ddb/errors.hpp"
#include "ddb/harness/config.hpp"
#include "ddb/harness/experiments.hpp"
#include "ddb/harness/pipeline.hpp"

namespace ddb::harness {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::optional<double> guidance_w;
  std::string recipe;
  std::string labeling_mode;
  bool force = false;
  bool allow_real_ba = false;
  std::vector<std::string> vary;
  std::vector<std::string> run_dirs;
  std::string out;
};

void add_common(CLI::App* cmd, Flags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--seed", f.seed, "run this seed only");
  cmd->add_option("--gamma", f.gamma, "pseudo-label threshold multiplier");
  cmd->add_option("--guidance-w", f.guidance_w, "classifier-free guidance strength");
  cmd->add_option("--recipe", f.recipe, "recipe1, recipe2 or erm");
  cmd->add_option("--labeling-mode", f.labeling_mode, "filtered or error_set");
  cmd->add_flag("--force", f.force, "recompute even when up to date");
  cmd->add_flag("--allow-real-ba", f.allow_real_ba, "train the bias amplifier on real data (negative control)");
}

ExperimentConfig effective_config(const Flags& f) {
  const ExperimentConfig base = load_config(f.config);
  nlohmann::json doc = base.doc;
  if (f.seed) doc["seeds"] = {*f.seed};
  if (f.gamma) doc["amplifier"]["gamma"] = *f.gamma;
  if (f.guidance_w) doc["guidance"]["w"] = *f.guidance_w;
  if (!f.recipe.empty()) doc["recipe"]["id"] = f.recipe;
  if (!f.labeling_mode.empty()) doc["amplifier"]["labeling_mode"] = f.labeling_mode;
  if (f.allow_real_ba) doc["amplifier"]["allow_real"] = true;
  if (const char* root = std::getenv("DDB_OUTPUT_ROOT"); root != nullptr && *root != '\0') doc["output_dir"] = root;
  return resolve_config(doc, base.base_dir);
}

void log_line(const std::string& msg) { std::cerr << "[ddb] " << msg << std::endl; }

int dispatch(const std::string& command, const Flags& f) {
  if (command == "report") {
    fs::path root = ".";
    if (!f.config.empty()) {
      root = effective_config(f).output_dir;
    } else if (const char* r = std::getenv("DDB_OUTPUT_ROOT"); r != nullptr && *r != '\0') {
      root = r;
    }
    std::vector<fs::path> dirs(f.run_dirs.begin(), f.run_dirs.end());
    if (dirs.empty()) dirs = find_run_dirs(root);
    const fs::path out = f.out.empty() ? root / "report.md" : fs::path(f.out);
    const auto summary = write_report(dirs, out);
    log_line("report: " + std::to_string(summary.complete) + " run(s), " +
             std::to_string(summary.incomplete.size()) + " incomplete -> " + out.string());
    return 0;
  }

  const ExperimentConfig cfg = effective_config(f);
  RunOptions opts;
  opts.force = f.force;
  opts.log = log_line;
  opts.cache_dir = cache_dir_for(cfg);

  if (command == "sweep") {
    std::vector<GridAxis> axes;
    for (const auto& v : f.vary) axes.push_back(parse_grid_axis(v));
    const fs::path dir = cfg.output_dir / "sweep";
    const auto result = run_sweep(cfg, axes, cfg.seeds, dir, opts);
    std::vector<fs::path> dirs;
    for (const auto& r : result.runs) dirs.push_back(r.dir);
    write_report(dirs, dir / "report.md");
    log_line("sweep: " + std::to_string(result.runs.size()) + " run(s), " + std::to_string(result.failures) +
             " failed -> " + result.summary_csv.string());
    return result.failures == 0 ? 0 : 2;
  }

  for (auto seed : cfg.seeds) {
    Run run(cfg, seed, run_dir_for(cfg, seed), opts);
    if (command == "pipeline") {
      for (const auto& r : run.run_pipeline()) {
        log_line("seed " + std::to_string(seed) + " " + r.stage + ": " + to_string(r.outcome));
      }
    } else {
      run.run_stage(command);
    }
  }
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"Diffusion-based debiasing pipeline", "ddb"};
  app.require_subcommand(1, 1);
  Flags f;
  std::vector<std::pair<std::string, CLI::App*>> commands;
  for (const auto& stage : stage_names()) {
    auto* cmd = app.add_subcommand(stage, "run the " + stage + " stage");
    add_common(cmd, f, true);
    commands.emplace_back(stage, cmd);
  }
  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");
  add_common(pipeline, f, true);
  commands.emplace_back("pipeline", pipeline);
  auto* sweep = app.add_subcommand("sweep", "run a parameter grid");
  add_common(sweep, f, true);
  sweep->add_option("--vary", f.vary, "key=v1,v2,... (repeatable)");
  commands.emplace_back("sweep", sweep);
  auto* report = app.add_subcommand("report", "summarise completed runs");
  add_common(report, f, false);
  report->add_option("run_dirs", f.run_dirs, "run directories (default: every run under the output root)");
  report->add_option("--out", f.out, "report path (default: <output root>/report.md)");
  commands.emplace_back("report", report);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  std::string command;
  for (const auto& [name, cmd] : commands) {
    if (cmd->parsed()) command = name;
  }
  try {
    return dispatch(command, f);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << std::endl;
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}

}  // namespace ddb::harness
