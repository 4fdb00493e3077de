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

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ddb/amplifier.hpp"
#include "ddb/corpus.hpp"
#include "ddb/errors.hpp"

using namespace ddb;
using namespace ddb::amplifier;

namespace {

std::vector<PseudoLabelRecord> four_records() {
  // losses {0.1, 0.2, 0.3, 2.4}, correctness {T, T, F, F}
  return {{"a", 0, 0, 0.1}, {"b", 1, 1, 0.2}, {"c", 0, 1, 0.3}, {"d", 1, 0, 2.4}};
}

std::vector<int> flags(const std::vector<PseudoLabelRecord>& r) {
  std::vector<int> out;
  for (const auto& x : r) out.push_back(x.c_hat);
  return out;
}

std::vector<PseudoLabelRecord> random_records(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<PseudoLabelRecord> out;
  for (int i = 0; i < n; ++i) {
    const int y = rng.uniform_int(0, 2);
    const int y_hat = rng.bernoulli(0.3) ? (y + 1) % 3 : y;
    const double loss = y_hat == y ? rng.uniform(0.0, 0.7) : rng.uniform(0.3, 6.0);
    out.push_back({"r" + std::to_string(i), y, y_hat, loss});
  }
  return out;
}

corpus::Dataset tiny_dataset(bool synthetic, int per_class = 12) {
  corpus::BiasedDatasetSpec spec;
  spec.samples_per_class = per_class;
  spec.val_per_group = 0;
  spec.test_per_group = 0;
  spec.rho = 0.9;
  auto d = corpus::generate_biased_dataset(spec);
  for (auto& s : d.samples) s.synthetic = synthetic;
  return d;
}

training::ClassifierTrainConfig quick_config() {
  training::ClassifierTrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.widths = {8, 8};
  return c;
}

}  // namespace

TEST(LossStats, HandComputedPopulationMoments) {
  const auto s = compute_loss_stats(four_records());
  EXPECT_EQ(s.n, 4u);
  EXPECT_NEAR(s.mu, 0.75, 1e-12);
  EXPECT_NEAR(s.sigma, std::sqrt(0.9125), 1e-12);
  // The four-decimal figure 0.9553 quoted for this case rounds sqrt(0.9125) = 0.95525 up.
  EXPECT_NEAR(s.sigma, 0.9553, 1e-4);
}

TEST(LossStats, PerfectModelHasZeroStatistics) {
  std::vector<PseudoLabelRecord> r = {{"a", 0, 0, 0.0}, {"b", 1, 1, 0.0}};
  const auto s = compute_loss_stats(r);
  EXPECT_EQ(s.mu, 0.0);
  EXPECT_EQ(s.sigma, 0.0);
}

TEST(PseudoLabel, FilteredRuleHandExample) {
  const auto recs = four_records();
  const auto out = pseudo_label_filtered(recs, compute_loss_stats(recs), 1.0);
  EXPECT_EQ(flags(out), (std::vector<int>{0, 0, 0, 1}));
  const double threshold = 0.75 + std::sqrt(0.9125);
  EXPECT_LT(std::abs(threshold - 1.7053) / 1.7053, 5e-5);
}

TEST(PseudoLabel, ErrorSetHandExample) {
  EXPECT_EQ(flags(pseudo_label_error_set(four_records())), (std::vector<int>{0, 0, 1, 1}));
}

TEST(PseudoLabel, ThresholdIsStrict) {
  // Two samples: loss 0 and 2; mu = 1, sigma = 1; gamma = 1 puts the
  // threshold exactly on the larger loss.
  std::vector<PseudoLabelRecord> r = {{"a", 0, 0, 0.0}, {"b", 0, 1, 2.0}};
  EXPECT_EQ(flags(pseudo_label_filtered(r, compute_loss_stats(r), 1.0)), (std::vector<int>{0, 0}));
  EXPECT_EQ(flags(pseudo_label_filtered(r, compute_loss_stats(r), 0.999)), (std::vector<int>{0, 1}));
}

TEST(PseudoLabel, CorrectPredictionsAreNeverFlagged) {
  std::vector<PseudoLabelRecord> r = {{"a", 0, 0, 9.0}, {"b", 1, 1, 0.0}, {"c", 1, 1, 0.0}};
  EXPECT_EQ(flags(pseudo_label_filtered(r, compute_loss_stats(r), 0.0)), (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(flags(pseudo_label_error_set(r)), (std::vector<int>{0, 0, 0}));
}

TEST(PseudoLabel, LargeGammaFlagsNothing) {
  const auto recs = random_records(4, 300);
  const auto out = pseudo_label_filtered(recs, compute_loss_stats(recs), 1000.0);
  EXPECT_EQ(count_conflicting(out), 0u);
}

TEST(PseudoLabel, SubsetAndMonotonicityLaws) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto recs = random_records(seed, 200);
    const auto stats = compute_loss_stats(recs);
    const auto err = pseudo_label_error_set(recs);
    std::vector<int> prev(recs.size(), 1);
    for (double gamma : {0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0}) {
      const auto f = pseudo_label_filtered(recs, stats, gamma);
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if (f[i].c_hat == 1) {
          EXPECT_EQ(err[i].c_hat, 1);
          EXPECT_NE(f[i].y_hat, f[i].y);
        }
        EXPECT_LE(f[i].c_hat, prev[i]);
        prev[i] = f[i].c_hat;
      }
    }
  }
}

TEST(PseudoLabel, MismatchedStatisticsAreRejected) {
  const auto recs = four_records();
  auto stats = compute_loss_stats(recs);
  stats.mu += 0.01;
  EXPECT_THROW(pseudo_label_filtered(recs, stats, 3.0), UsageError);
  auto fewer = recs;
  fewer.pop_back();
  EXPECT_THROW(pseudo_label_filtered(fewer, compute_loss_stats(recs), 3.0), UsageError);
  EXPECT_THROW(pseudo_label_filtered(recs, compute_loss_stats(recs), -1.0), UsageError);
}

TEST(PseudoLabel, PerClassStatisticsUseEachClassSeparately) {
  // Class 0 losses are small, class 1 losses large; a global threshold would
  // flag only class 1, per-class thresholds flag the outlier of each class.
  std::vector<PseudoLabelRecord> r;
  for (int i = 0; i < 9; ++i) r.push_back({"a" + std::to_string(i), 0, 0, 0.1});
  r.push_back({"a9", 0, 1, 1.0});
  for (int i = 0; i < 9; ++i) r.push_back({"b" + std::to_string(i), 1, 1, 3.0});
  r.push_back({"b9", 1, 0, 6.0});
  const auto per = pseudo_label_filtered_per_class(r, 2.0);
  EXPECT_EQ(per[9].c_hat, 1);
  EXPECT_EQ(per[19].c_hat, 1);
  EXPECT_EQ(count_conflicting(per), 2u);
  const auto global = pseudo_label_filtered(r, compute_loss_stats(r), 1.0);
  EXPECT_EQ(global[9].c_hat, 0);
}

TEST(PseudoLabel, PrecisionAgainstTheOracle) {
  auto d = tiny_dataset(false);
  std::vector<PseudoLabelRecord> recs;
  for (const auto& s : d.samples) {
    const int c = s.c == corpus::Alignment::kConflicting ? 1 : 0;
    recs.push_back({s.id, s.y, c ? 1 - s.y : s.y, 0.0, c});
  }
  const auto q = pseudo_label_precision(recs, d);
  EXPECT_EQ(q.precision, 1.0);
  EXPECT_EQ(q.recall, 1.0);

  // Flag one extra aligned sample: precision tp/(tp+1).
  for (auto& r : recs) {
    if (r.c_hat == 0) {
      r.c_hat = 1;
      break;
    }
  }
  const auto q2 = pseudo_label_precision(recs, d);
  EXPECT_NEAR(q2.precision, q2.true_positive / (q2.true_positive + 1.0), 1e-12);
  EXPECT_EQ(q2.recall, 1.0);

  for (auto& s : d.samples) {
    s.b = corpus::kUnknownBias;
    s.c = corpus::Alignment::kUnknown;
  }
  EXPECT_THROW(pseudo_label_precision(recs, d), UsageError);
}

TEST(PseudoLabel, CsvAndSidecarRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "ddb_pl_test";
  std::filesystem::create_directories(dir);
  const auto recs = four_records();
  const auto stats = compute_loss_stats(recs);
  const PseudoLabelOptions opts{LabelingMode::kFiltered, 1.0, false};
  const auto labeled = pseudo_label(recs, stats, opts);
  write_pseudo_labels(dir / "pl.csv", dir / "pl.json", labeled, stats, opts);
  const auto back = read_pseudo_labels(dir / "pl.csv");
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i].id, labeled[i].id);
    EXPECT_EQ(back[i].loss, labeled[i].loss);
    EXPECT_EQ(back[i].c_hat, labeled[i].c_hat);
  }
  nlohmann::json side;
  std::ifstream(dir / "pl.json") >> side;
  EXPECT_EQ(side["conflicting_count"], 1);
  EXPECT_EQ(side["n"], 4);
  EXPECT_DOUBLE_EQ(side["gamma"].get<double>(), 1.0);
  // Stored statistics recompute from the stored losses.
  const auto again = compute_loss_stats(back);
  EXPECT_LE(std::abs(again.mu - side["mu"].get<double>()), 1e-9 * std::abs(again.mu));
  EXPECT_LE(std::abs(again.sigma - side["sigma"].get<double>()), 1e-9 * std::abs(again.sigma));
}

TEST(Amplifier, RejectsRealSamplesBeforeTraining) {
  auto d = tiny_dataset(true);
  d.samples[5].synthetic = false;
  EXPECT_THROW(train_amplifier(d, quick_config(), 1), ContractViolation);
  bool trained = false;
  try {
    train_amplifier(d, quick_config(), 1, false, [&](const training::EpochLog&) { trained = true; });
  } catch (const ContractViolation&) {
  }
  EXPECT_FALSE(trained);
}

TEST(Amplifier, OverrideTagsProvenanceAndScoringRefusesIt) {
  const auto real = tiny_dataset(false);
  auto m = train_amplifier(real, quick_config(), 1, true);
  EXPECT_EQ(m.provenance, kRealOverride);
  EXPECT_THROW(score_dataset(m, real), ContractViolation);
  EXPECT_NO_THROW(score_dataset(m, real, true));
}

TEST(Amplifier, ScoringIsDeterministicAndConsistent) {
  const auto synth = tiny_dataset(true);
  const auto real = tiny_dataset(false);
  auto m = train_amplifier(synth, quick_config(), 3);
  EXPECT_EQ(m.provenance, kSyntheticOnly);
  EXPECT_TRUE(m.net.frozen());
  const auto a = score_dataset(m, real);
  const auto b = score_dataset(m, real);
  ASSERT_EQ(a.records.size(), real.indices(corpus::Split::kTrain).size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    EXPECT_EQ(a.records[i].y_hat, b.records[i].y_hat);
    EXPECT_GE(a.records[i].loss, 0.0);
  }
  const auto fresh = compute_loss_stats(a.records);
  EXPECT_EQ(fresh.mu, a.stats.mu);
  EXPECT_EQ(fresh.sigma, a.stats.sigma);

  const auto path = std::filesystem::temp_directory_path() / "ddb_amp_test.ckpt";
  save_amplifier(path, m, {});
  auto loaded = load_amplifier(path);
  EXPECT_EQ(loaded.provenance, kSyntheticOnly);
  const auto c = score_dataset(loaded, real);
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].loss, c.records[i].loss);
}

TEST(Amplifier, ShapeMismatchIsAUsageError) {
  const auto synth = tiny_dataset(true);
  auto m = train_amplifier(synth, quick_config(), 3);
  corpus::BiasedDatasetSpec spec;
  spec.samples_per_class = 4;
  spec.height = spec.width = 8;
  const auto other = corpus::generate_biased_dataset(spec);
  EXPECT_THROW(score_dataset(m, other), UsageError);
}
