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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ddb/harness/config.hpp"
#include "json.hpp"

namespace ddb::harness {

// Stage names accepted by run_stage, in pipeline order.
const std::vector<std::string>& stage_names();

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
  bool force = false;
  LogFn log;  // progress and warnings; defaults to standard error
  // Content-addressed store shared between run directories; empty disables.
  std::filesystem::path cache_dir;
};

enum class StageOutcome { kRan, kUpToDate, kRestored };
std::string to_string(StageOutcome o);

struct StageReport {
  std::string stage;
  StageOutcome outcome = StageOutcome::kRan;
  double seconds = 0.0;
};

// One seed of one configuration, materialised in `dir`. manifest.json maps
// each completed stage to its cache key, artifacts (path + SHA-256) and
// wall-clock duration.
class Run {
 public:
  Run(ExperimentConfig config, std::uint64_t seed, std::filesystem::path dir, RunOptions options = {});

  const std::filesystem::path& dir() const { return dir_; }
  const ExperimentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const nlohmann::json& manifest() const { return manifest_; }

  StageReport run_stage(const std::string& stage);
  // Every stage in order; marks the manifest complete or failed.
  std::vector<StageReport> run_pipeline();

  // Path of a recorded artifact after verifying its hash against the
  // manifest. ConfigError when absent, ArtifactError on mismatch.
  std::filesystem::path artifact(const std::string& name) const;
  std::string recipe_tag() const;

 private:
  StageReport execute(const std::string& stage, const nlohmann::json& key_material,
                      const std::vector<std::string>& inputs, const std::vector<std::string>& optional_inputs,
                      const std::function<std::vector<std::string>()>& body);
  bool outputs_intact(const nlohmann::json& entry) const;
  bool restore_from_cache(const std::string& key, nlohmann::json& entry);
  void store_in_cache(const std::string& key, const nlohmann::json& entry);
  void save_manifest() const;
  void log(const std::string& msg) const;

  StageReport gen_data();
  StageReport train_cdpm();
  StageReport sample();
  StageReport train_ba();
  StageReport score();
  StageReport pseudo_label();
  StageReport train();
  StageReport eval();

  ExperimentConfig config_;
  std::uint64_t seed_;
  std::filesystem::path dir_;
  RunOptions options_;
  nlohmann::json manifest_;
  std::string stage_key_;  // key of the stage being computed
};

// Default run directory of a seed: <output_dir>/seed-<seed>.
std::filesystem::path run_dir_for(const ExperimentConfig& config, std::uint64_t seed);
std::filesystem::path cache_dir_for(const ExperimentConfig& config);

}  // namespace ddb::harness
