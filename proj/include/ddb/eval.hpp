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

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddb/amplifier.hpp"
#include "ddb/corpus.hpp"
#include "ddb/nn/models.hpp"
#include "json.hpp"

namespace ddb::eval {

// Groups are (y, b) pairs with id y*|B| + b. Accuracies of empty groups are
// NaN and ignored by the summary statistics.
struct GroupMetrics {
  int num_classes = 0;
  int num_bias_attributes = 0;
  std::vector<double> group_acc;
  std::vector<std::size_t> group_count;
  double average_acc = 0.0;  // over every evaluated sample, unknown b included
  double worst_group_acc = 0.0;
  double conflicting_acc = 0.0;  // NaN without conflicting samples
  std::vector<double> conflicting_acc_per_class;
  std::size_t n = 0;
  std::size_t n_unknown_bias = 0;

  nlohmann::json to_json() const;
};

GroupMetrics group_metrics(const corpus::Dataset& dataset, const std::vector<std::size_t>& indices,
                           const std::vector<int>& predictions);
// Evaluates on the given split (test by default).
GroupMetrics evaluate_groups(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                             corpus::Split split = corpus::Split::kTest);

struct GapMetrics {
  double id_acc = 0.0;
  std::map<int, double> gaps;  // minority group id -> id_acc - acc_g

  nlohmann::json to_json() const;
};

// Training-split share of every oracle group.
std::vector<double> train_group_proportions(const corpus::Dataset& dataset);
// Groups whose attribute is not the one aligned with their class.
std::vector<int> minority_groups(const corpus::Dataset& dataset);

GapMetrics compute_gaps(const std::vector<double>& group_acc, const std::vector<double>& proportions,
                        const std::vector<int>& minority);
GapMetrics evaluate_gaps(const GroupMetrics& metrics, const std::vector<double>& proportions,
                         const std::vector<int>& minority);

using BiasOracle = std::function<std::optional<int>(const corpus::LabeledSample&)>;

// The generator's background-colour oracle, undoing any normalisation
// recorded on `dataset`.
BiasOracle color_oracle_for(const corpus::Dataset& dataset);

struct GenerationBias {
  double rho = 0.0;  // mean over classes of the aligned fraction
  std::vector<double> per_class;
  std::size_t n = 0;
  std::size_t oracle_failures = 0;
};

// Oracle failures below 1% of the samples are excluded and reported; more
// raise OracleError. `split` restricts to one split when set.
GenerationBias measure_generation_bias(const corpus::Dataset& images, const BiasOracle& oracle,
                                       std::optional<corpus::Split> split = std::nullopt);

std::string loss_histogram_svg(const std::vector<amplifier::PseudoLabelRecord>& records,
                               const amplifier::LossStats& stats, double gamma, int bins = 40);
std::string group_accuracy_svg(const GroupMetrics& metrics, const std::vector<std::string>& bias_attributes,
                               const std::string& title);

}  // namespace ddb::eval
