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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddb/harness/config.hpp"
#include "ddb/harness/pipeline.hpp"
#include "json.hpp"

namespace ddb::harness {

struct SweepRun {
  std::string point;  // "key=value,..." or "baseline"
  std::map<std::string, std::string> values;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  std::string status;  // "complete" or "failed"
  std::string error;
  nlohmann::json metrics;  // null on failure
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::size_t failures = 0;
  std::filesystem::path runs_csv;     // one row per run
  std::filesystem::path summary_csv;  // mean and std per grid point
  std::filesystem::path plot_svg;
};

// Cartesian product of the axes (an empty grid is the single baseline point),
// one full pipeline per point and seed under <sweep_dir>/<point>/seed-<s>.
// Failed runs are recorded and the sweep carries on.
SweepResult run_sweep(const ExperimentConfig& base, const std::vector<GridAxis>& axes,
                      const std::vector<std::uint64_t>& seeds, const std::filesystem::path& sweep_dir,
                      const RunOptions& options);

// Scalar metrics pulled out of a metrics document; NaN when absent.
std::map<std::string, double> headline_metrics(const nlohmann::json& metrics);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

// Directories below `root` holding a manifest.json, cache excluded.
std::vector<std::filesystem::path> find_run_dirs(const std::filesystem::path& root);

struct ReportSummary {
  std::size_t complete = 0;
  std::vector<std::string> incomplete;
  std::string markdown;
};

// Markdown report over the given run directories: metric tables (mean and
// std over seeds) grouped by configuration, paired recipe-vs-ERM worst-group
// deltas, config differences and links to the SVG plots. Runs without a
// metrics file are listed as incomplete.
ReportSummary write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out);

}  // namespace ddb::harness
