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
#include <string>
#include <utility>
#include <vector>

#include "ddb/amplifier.hpp"
#include "ddb/corpus.hpp"
#include "ddb/debias.hpp"
#include "ddb/diffusion.hpp"
#include "ddb/training.hpp"
#include "json.hpp"

namespace ddb::harness {

struct DatasetSection {
  std::string kind = "generated";  // or "ingest"
  corpus::BiasedDatasetSpec spec;
  std::filesystem::path root;
  std::filesystem::path manifest;
  corpus::IngestOptions ingest;
};

struct AmplifierSection {
  training::ClassifierTrainConfig train;
  int synthetic_per_class = 500;
  double gamma = 3.0;
  amplifier::LabelingMode labeling_mode = amplifier::LabelingMode::kFiltered;
  bool per_class_stats = false;
  bool allow_real = false;
};

struct ExperimentConfig {
  nlohmann::json doc;  // fully resolved document, defaults filled in
  DatasetSection dataset;
  diffusion::CDPMConfig diffusion;
  double guidance_w = 1.0;
  AmplifierSection amplifier;
  debias::RecipeConfig recipe;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;
  std::filesystem::path base_dir;  // directory of the config file

  // Hash of everything except seeds and output_dir.
  std::string hash() const;
  // As hash(), additionally ignoring the recipe id; runs that differ only in
  // the recipe share it.
  std::string comparison_hash() const;
};

// The explicit defaults document. Every key a config may set appears here.
const nlohmann::json& default_config();

// Overlays `user` on the defaults. Unknown keys and type mismatches are
// ConfigErrors. Relative ingest paths resolve against `base_dir`.
ExperimentConfig resolve_config(const nlohmann::json& user, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Sets a dotted key ("guidance.w") in a config document. The value text is
// parsed as JSON when possible and as a bare string otherwise.
void set_override(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);
nlohmann::json get_dotted(const nlohmann::json& doc, const std::string& dotted_key);

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};
// "key=v1,v2,..."
GridAxis parse_grid_axis(const std::string& text);

}  // namespace ddb::harness
