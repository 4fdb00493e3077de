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
#include <span>
#include <string>
#include <vector>

#include "ddb/amplifier.hpp"
#include "ddb/corpus.hpp"
#include "ddb/nn/models.hpp"
#include "ddb/training.hpp"
#include "json.hpp"

// Target-model training: G-DRO over pseudo-groups, loss reweighting by a
// frozen bias amplifier, and the plain ERM baseline.
namespace ddb::debias {

// Training-split samples partitioned into groups id = y*2 + c_hat.
struct GroupAssignment {
  int num_groups = 0;
  std::vector<std::size_t> sample_indices;  // dataset indices of the train split
  std::vector<int> group_of;                // parallel to sample_indices
  std::vector<std::size_t> counts;          // per group
  std::vector<int> empty_groups;
  std::vector<int> lookup;  // dataset index -> group id, -1 outside the train split
};

// Every train-split sample needs a pseudo-label (matched by id).
GroupAssignment make_groups(const corpus::Dataset& dataset,
                            const std::vector<amplifier::PseudoLabelRecord>& pseudo_labels);

struct GDROState {
  std::vector<double> q;
  double eta = 0.01;
  bool reweight_groups = true;

  // Uniform over the groups flagged active; inactive groups keep q = 0.
  static GDROState uniform(const std::vector<bool>& active, double eta, bool reweight_groups);
};

// q_g <- q_g * exp(eta * L_g), then renormalise.
void gdro_update(GDROState& state, std::span<const double> group_losses);

// Per-batch G-DRO objective sum_g q_g L_g (q updated first). Groups absent
// from the batch contribute L_g = 0.
training::BatchLoss gdro_batch_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> groups,
                                    GDROState& state, std::vector<double>* group_losses = nullptr,
                                    std::vector<std::size_t>* group_counts = nullptr);

// r = L_amp / (L_deb + L_amp), 0 when both are 0.
double reweight_factor(double amplifier_loss, double target_loss);

struct Recipe2Batch {
  training::BatchLoss loss;
  std::vector<double> r;
  std::vector<double> amplifier_loss;
};

// mean_i r_i * CE_target_i with r a constant. The amplifier must be frozen.
Recipe2Batch recipe2_batch_loss(nn::ConvClassifier& frozen_amplifier, const Tensor& x, const Tensor& target_logits,
                                std::span<const int> labels);

// One optimiser-free recipe-2 step: loss plus back-propagation into the
// target only. Returns the batch loss.
double recipe2_step(nn::ConvClassifier& target, nn::ConvClassifier& frozen_amplifier, const Tensor& x,
                    std::span<const int> labels);

enum class RecipeId { kRecipe1, kRecipe2, kErm };
RecipeId recipe_from_string(const std::string& s);
std::string to_string(RecipeId r);

struct RecipeConfig {
  RecipeId id = RecipeId::kRecipe1;
  double eta = 0.01;
  bool reweight_groups = true;
  training::ClassifierTrainConfig train;

  nlohmann::json to_json() const;
  static RecipeConfig from_json(const nlohmann::json& j);
};

struct RecipeInputs {
  const corpus::Dataset* train = nullptr;  // normalised, train split used
  const GroupAssignment* groups = nullptr;  // required by recipe1
  nn::ConvClassifier* amplifier = nullptr;  // required by recipe2, frozen
};

struct EpochRecord {
  int epoch = 0;
  std::string recipe;
  std::vector<double> per_group_loss;
  std::vector<double> per_group_acc;
  std::vector<double> q;
  double train_acc = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct RecipeResult {
  nn::ConvClassifier model;
  std::vector<EpochRecord> log;
  std::vector<std::string> warnings;
};

using WarningFn = std::function<void(const std::string&)>;

RecipeResult train_recipe(const RecipeConfig& config, const RecipeInputs& inputs, std::uint64_t seed,
                          const WarningFn& warn = {});

void write_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);

}  // namespace ddb::debias
