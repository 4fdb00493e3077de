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
#include <vector>

#include "ddb/corpus.hpp"
#include "ddb/nn/models.hpp"
#include "ddb/training.hpp"
#include "json.hpp"

// The bias amplifier: a classifier trained on synthetic bias-aligned images
// only, then used to flag real training samples as likely bias-conflicting.
namespace ddb::amplifier {

inline constexpr const char* kSyntheticOnly = "synthetic-only";
inline constexpr const char* kRealOverride = "real-override";

struct AmplifierModel {
  nn::ConvClassifier net;
  std::string provenance;
  double final_train_accuracy = 0.0;
};

// Rejects any non-synthetic sample unless allow_real is set; the provenance
// tag then reads "real-override" and scoring refuses the model by default.
AmplifierModel train_amplifier(const corpus::Dataset& synthetic, const training::ClassifierTrainConfig& config,
                               std::uint64_t seed, bool allow_real = false,
                               const training::EpochCallback& on_epoch = {});

struct LossStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  std::size_t n = 0;
};

inline constexpr int kUnlabeled = -1;

struct PseudoLabelRecord {
  std::string id;
  int y = 0;
  int y_hat = 0;
  double loss = 0.0;
  int c_hat = kUnlabeled;  // 0 aligned, 1 conflicting
};

LossStats compute_loss_stats(const std::vector<PseudoLabelRecord>& records);

struct ScoreResult {
  std::vector<PseudoLabelRecord> records;
  LossStats stats;
};

// Scores the train split of `real`. Refuses a model whose provenance is not
// synthetic-only unless allow_override_provenance is set.
ScoreResult score_dataset(AmplifierModel& model, const corpus::Dataset& real, bool allow_override_provenance = false);

// c_hat = 1 iff y_hat != y and loss > mu + gamma * sigma.
std::vector<PseudoLabelRecord> pseudo_label_filtered(std::vector<PseudoLabelRecord> records, const LossStats& stats,
                                                     double gamma);
// Same rule with mu/sigma taken per true class.
std::vector<PseudoLabelRecord> pseudo_label_filtered_per_class(std::vector<PseudoLabelRecord> records, double gamma);
// c_hat = 1 iff y_hat != y.
std::vector<PseudoLabelRecord> pseudo_label_error_set(std::vector<PseudoLabelRecord> records);

enum class LabelingMode { kFiltered, kErrorSet };
LabelingMode labeling_mode_from_string(const std::string& s);
std::string to_string(LabelingMode m);

struct PseudoLabelOptions {
  LabelingMode mode = LabelingMode::kFiltered;
  double gamma = 3.0;
  bool per_class_stats = false;
};
std::vector<PseudoLabelRecord> pseudo_label(const std::vector<PseudoLabelRecord>& records, const LossStats& stats,
                                            const PseudoLabelOptions& options);

struct IdentificationQuality {
  double precision = 0.0;  // NaN when nothing is flagged
  double recall = 0.0;     // NaN when the oracle has no conflicting samples
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t flagged = 0;
};

// Compares c_hat against the dataset's oracle c, matched by id; samples with
// unknown c are skipped.
IdentificationQuality pseudo_label_precision(const std::vector<PseudoLabelRecord>& records,
                                             const corpus::Dataset& dataset);

std::size_t count_conflicting(const std::vector<PseudoLabelRecord>& records);

// CSV `id,y,y_hat,loss,c_hat` and a JSON sidecar {mu, sigma, gamma, n,
// conflicting_count, mode}.
void write_pseudo_labels(const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path,
                         const std::vector<PseudoLabelRecord>& records, const LossStats& stats,
                         const PseudoLabelOptions& options);
std::vector<PseudoLabelRecord> read_pseudo_labels(const std::filesystem::path& csv_path);

void save_amplifier(const std::filesystem::path& path, AmplifierModel& model, const nlohmann::json& extra_meta);
AmplifierModel load_amplifier(const std::filesystem::path& path);

}  // namespace ddb::amplifier
