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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ddb/corpus.hpp"
#include "ddb/errors.hpp"
#include "ddb/eval.hpp"

using namespace ddb;
using namespace ddb::eval;

namespace {

// A 2x2-group test set with `per_group` samples per (y, b); predictions are
// right for the first round(acc_g * per_group) samples of each group.
struct Scenario {
  corpus::Dataset data;
  std::vector<std::size_t> idx;
  std::vector<int> pred;
};

Scenario scenario(const std::vector<double>& accs, int per_group) {
  Scenario s;
  s.data.num_classes = 2;
  s.data.bias_attributes = {"red", "green"};
  s.data.channels = 1;
  s.data.height = s.data.width = 1;
  for (int g = 0; g < 4; ++g) {
    const int y = g / 2, b = g % 2;
    const int right = static_cast<int>(std::lround(accs[g] * per_group));
    for (int i = 0; i < per_group; ++i) {
      corpus::LabeledSample x;
      x.id = "g" + std::to_string(g) + "-" + std::to_string(i);
      x.y = y;
      x.b = b;
      x.c = s.data.alignment_of(y, b);
      x.split = corpus::Split::kTest;
      x.image = {0.0F};
      s.idx.push_back(s.data.samples.size());
      s.pred.push_back(i < right ? y : 1 - y);
      s.data.samples.push_back(x);
    }
  }
  return s;
}

}  // namespace

TEST(GroupMetrics, WorstGroupIsTheMinimum) {
  auto s = scenario({0.9, 0.8, 0.95, 0.6}, 20);
  const auto m = group_metrics(s.data, s.idx, s.pred);
  EXPECT_NEAR(m.group_acc[0], 0.9, 1e-12);
  EXPECT_NEAR(m.group_acc[3], 0.6, 1e-12);
  EXPECT_NEAR(m.worst_group_acc, 0.6, 1e-12);
  EXPECT_NEAR(m.average_acc, (0.9 + 0.8 + 0.95 + 0.6) / 4, 1e-12);
  // Conflicting groups are (0, green) and (1, red): 0.8 and 0.95.
  EXPECT_NEAR(m.conflicting_acc, (0.8 + 0.95) / 2, 1e-12);
  EXPECT_NEAR(m.conflicting_acc_per_class[0], 0.8, 1e-12);
  EXPECT_LE(m.worst_group_acc, m.average_acc);
  EXPECT_LE(m.average_acc, *std::max_element(m.group_acc.begin(), m.group_acc.end()));
}

TEST(GroupMetrics, PerfectPredictions) {
  auto s = scenario({1, 1, 1, 1}, 5);
  const auto m = group_metrics(s.data, s.idx, s.pred);
  EXPECT_EQ(m.average_acc, 1.0);
  EXPECT_EQ(m.worst_group_acc, 1.0);
  EXPECT_EQ(m.conflicting_acc, 1.0);
}

TEST(GroupMetrics, PermutationInvariant) {
  auto s = scenario({0.7, 0.3, 0.55, 0.9}, 20);
  const auto a = group_metrics(s.data, s.idx, s.pred);
  Rng rng(3);
  std::vector<std::size_t> order(s.idx.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::size_t> idx;
  std::vector<int> pred;
  for (auto k : order) {
    idx.push_back(s.idx[k]);
    pred.push_back(s.pred[k]);
  }
  const auto b = group_metrics(s.data, idx, pred);
  EXPECT_EQ(a.group_acc, b.group_acc);
  EXPECT_EQ(a.average_acc, b.average_acc);
  EXPECT_EQ(a.conflicting_acc, b.conflicting_acc);
}

TEST(GroupMetrics, UnknownBiasCountsOnlyTowardsAverage) {
  auto s = scenario({1, 1, 1, 1}, 4);
  corpus::LabeledSample u;
  u.id = "unk";
  u.y = 0;
  u.image = {0.0F};
  u.split = corpus::Split::kTest;
  s.idx.push_back(s.data.samples.size());
  s.pred.push_back(1);
  s.data.samples.push_back(u);
  const auto m = group_metrics(s.data, s.idx, s.pred);
  EXPECT_EQ(m.n_unknown_bias, 1u);
  EXPECT_EQ(m.worst_group_acc, 1.0);
  EXPECT_NEAR(m.average_acc, 16.0 / 17.0, 1e-12);
}

TEST(GroupMetrics, EmptySetIsAUsageError) {
  corpus::Dataset d;
  d.num_classes = 2;
  d.bias_attributes = {"red", "green"};
  EXPECT_THROW(group_metrics(d, {}, {}), UsageError);
}

TEST(Gaps, HandComputedIdAccuracy) {
  const std::vector<double> p{0.9025, 0.0475, 0.0475, 0.0025};
  const std::vector<double> acc{1.0, 0.8, 0.8, 0.5};
  const auto g = compute_gaps(acc, p, {1, 2, 3});
  EXPECT_LT(std::abs(g.id_acc - 0.97975) / 0.97975, 1e-12);
  EXPECT_NEAR(g.gaps.at(3), 0.97975 - 0.5, 1e-12);
  EXPECT_NEAR(g.gaps.at(1), 0.97975 - 0.8, 1e-12);
}

TEST(Gaps, UniformProportionsAndEqualAccuracies) {
  const auto g = compute_gaps({0.2, 0.4, 0.6, 0.8}, {0.25, 0.25, 0.25, 0.25}, {1, 2});
  EXPECT_NEAR(g.id_acc, 0.5, 1e-12);
  const auto e = compute_gaps({0.7, 0.7, 0.7, 0.7}, {0.1, 0.2, 0.3, 0.4}, {0, 1, 2, 3});
  for (const auto& [k, v] : e.gaps) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Gaps, Errors) {
  EXPECT_THROW(compute_gaps({1, 1}, {0.5, 0.6}, {}), UsageError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(compute_gaps({1, nan}, {0.5, 0.5}, {1}), UsageError);
  EXPECT_NO_THROW(compute_gaps({1, nan}, {1.0, 0.0}, {}));
}

TEST(Gaps, TrainProportionsFromTheGenerator) {
  corpus::BiasedDatasetSpec spec;
  spec.rho = 0.95;
  spec.samples_per_class = 100;
  const auto d = corpus::generate_biased_dataset(spec);
  const auto p = train_group_proportions(d);
  EXPECT_NEAR(p[0], 0.475, 1e-12);
  EXPECT_NEAR(p[1], 0.025, 1e-12);
  EXPECT_EQ(minority_groups(d), (std::vector<int>{1, 2}));
}

TEST(GenerationBias, AllAlignedIsOne) {
  corpus::BiasedDatasetSpec spec;
  spec.rho = 1.0;
  spec.samples_per_class = 30;
  const auto d = corpus::generate_biased_dataset(spec);
  const auto g = measure_generation_bias(d, color_oracle_for(d), corpus::Split::kTrain);
  EXPECT_EQ(g.rho, 1.0);
}

TEST(GenerationBias, OracleFailuresBelowOnePercentAreExcluded) {
  corpus::BiasedDatasetSpec spec;
  spec.rho = 1.0;
  spec.samples_per_class = 150;
  spec.val_per_group = spec.test_per_group = 0;
  const auto d = corpus::generate_biased_dataset(spec);
  int calls = 0;
  const BiasOracle flaky = [&](const corpus::LabeledSample& s) -> std::optional<int> {
    if (calls++ < 2) return std::nullopt;
    return s.b;
  };
  const auto g = measure_generation_bias(d, flaky);
  EXPECT_EQ(g.oracle_failures, 2u);
  EXPECT_EQ(g.rho, 1.0);
  calls = -1;  // three failures out of 300 is 1%
  EXPECT_THROW(measure_generation_bias(d, flaky), OracleError);
}

TEST(GenerationBias, NormalisedImagesAreUndoneBeforeTheOracle) {
  corpus::BiasedDatasetSpec spec;
  spec.rho = 0.8;
  spec.samples_per_class = 50;
  const auto d = corpus::generate_biased_dataset(spec);
  const auto n = corpus::estimate_normalization(d, corpus::Split::kTrain);
  const auto z = corpus::normalize(d, n.mean, n.std);
  const auto g = measure_generation_bias(z, color_oracle_for(z), corpus::Split::kTrain);
  EXPECT_NEAR(g.rho, 0.8, 1e-12);
}

TEST(Plots, SvgDocumentsAreWellFormedEnough) {
  std::vector<amplifier::PseudoLabelRecord> r = {{"a", 0, 0, 0.1, 0}, {"b", 0, 1, 3.0, 1}};
  const auto svg = loss_histogram_svg(r, amplifier::compute_loss_stats(r), 1.0);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  auto s = scenario({0.9, 0.8, 0.95, 0.6}, 10);
  const auto bars = group_accuracy_svg(group_metrics(s.data, s.idx, s.pred), {"red", "green"}, "t");
  EXPECT_NE(bars.find("0.60"), std::string::npos);
}
