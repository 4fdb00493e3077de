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

#include "ddb/amplifier.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include "ddb/errors.hpp"

namespace ddb::amplifier {

using nlohmann::json;

AmplifierModel train_amplifier(const corpus::Dataset& synthetic, const training::ClassifierTrainConfig& config,
                               std::uint64_t seed, bool allow_real, const training::EpochCallback& on_epoch) {
  bool all_synthetic = true;
  for (const auto& s : synthetic.samples) {
    if (!s.synthetic) {
      if (!allow_real) {
        throw ContractViolation("bias amplifier input contains real sample '" + s.id +
                                "'; amplifier training accepts synthetic samples only");
      }
      all_synthetic = false;
    }
  }
  config.validate("amplifier");
  AmplifierModel model{nn::ConvClassifier(training::classifier_shape(synthetic, config), derive_seed(seed, {0xBA})),
                       "", 0.0};
  const auto idx = synthetic.indices(corpus::Split::kTrain);
  training::train_erm(model.net, synthetic, idx, config, derive_seed(seed, {0xBA, 1}), on_epoch);
  model.final_train_accuracy = training::accuracy(model.net, synthetic, idx);
  model.provenance = all_synthetic ? kSyntheticOnly : kRealOverride;
  model.net.freeze();
  return model;
}

LossStats compute_loss_stats(const std::vector<PseudoLabelRecord>& records) {
  LossStats s;
  s.n = records.size();
  if (records.empty()) return s;
  double sum = 0.0;
  for (const auto& r : records) sum += r.loss;
  s.mu = sum / static_cast<double>(s.n);
  double sq = 0.0;
  for (const auto& r : records) sq += (r.loss - s.mu) * (r.loss - s.mu);
  s.sigma = std::sqrt(sq / static_cast<double>(s.n));
  return s;
}

ScoreResult score_dataset(AmplifierModel& model, const corpus::Dataset& real, bool allow_override_provenance) {
  if (model.provenance != kSyntheticOnly && !allow_override_provenance) {
    throw ContractViolation("bias amplifier provenance is '" + model.provenance +
                            "', expected 'synthetic-only'; refusing to score real data");
  }
  const auto& shape = model.net.shape();
  if (shape.channels != real.channels || shape.height != real.height || shape.width != real.width ||
      shape.num_classes != real.num_classes) {
    throw UsageError("amplifier expects " + std::to_string(shape.num_classes) + " classes of " +
                     std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
                     std::to_string(shape.width) + " images; dataset differs");
  }
  const auto idx = real.indices(corpus::Split::kTrain);
  const Tensor logits = training::predict_logits(model.net, real, idx);
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = real.samples[idx[i]].y;
  const auto ce = training::cross_entropy(logits, labels);

  ScoreResult out;
  out.records.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.records.push_back({real.samples[idx[i]].id, labels[i], ce.predictions[i], ce.losses[i], kUnlabeled});
  }
  out.stats = compute_loss_stats(out.records);
  return out;
}

namespace {

bool close_rel(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace

std::vector<PseudoLabelRecord> pseudo_label_filtered(std::vector<PseudoLabelRecord> records, const LossStats& stats,
                                                     double gamma) {
  if (!std::isfinite(gamma) || gamma < 0.0) throw UsageError("gamma must be a finite non-negative number");
  const LossStats fresh = compute_loss_stats(records);
  if (stats.n != fresh.n || !close_rel(stats.mu, fresh.mu) || !close_rel(stats.sigma, fresh.sigma)) {
    throw UsageError("loss statistics (n=" + std::to_string(stats.n) + ") were not computed from these " +
                     std::to_string(fresh.n) + " records");
  }
  const double threshold = stats.mu + gamma * stats.sigma;
  for (auto& r : records) r.c_hat = (r.y_hat != r.y && r.loss > threshold) ? 1 : 0;
  return records;
}

std::vector<PseudoLabelRecord> pseudo_label_filtered_per_class(std::vector<PseudoLabelRecord> records, double gamma) {
  if (!std::isfinite(gamma) || gamma < 0.0) throw UsageError("gamma must be a finite non-negative number");
  std::map<int, std::vector<PseudoLabelRecord>> by_class;
  for (const auto& r : records) by_class[r.y].push_back(r);
  std::map<int, double> threshold;
  for (const auto& [y, group] : by_class) {
    const LossStats s = compute_loss_stats(group);
    threshold[y] = s.mu + gamma * s.sigma;
  }
  for (auto& r : records) r.c_hat = (r.y_hat != r.y && r.loss > threshold[r.y]) ? 1 : 0;
  return records;
}

std::vector<PseudoLabelRecord> pseudo_label_error_set(std::vector<PseudoLabelRecord> records) {
  for (auto& r : records) r.c_hat = r.y_hat != r.y ? 1 : 0;
  return records;
}

LabelingMode labeling_mode_from_string(const std::string& s) {
  if (s == "filtered") return LabelingMode::kFiltered;
  if (s == "error_set") return LabelingMode::kErrorSet;
  throw ConfigError("unknown labeling mode '" + s + "' (expected filtered or error_set)");
}

std::string to_string(LabelingMode m) { return m == LabelingMode::kFiltered ? "filtered" : "error_set"; }

std::vector<PseudoLabelRecord> pseudo_label(const std::vector<PseudoLabelRecord>& records, const LossStats& stats,
                                            const PseudoLabelOptions& options) {
  if (options.mode == LabelingMode::kErrorSet) return pseudo_label_error_set(records);
  if (options.per_class_stats) return pseudo_label_filtered_per_class(records, options.gamma);
  return pseudo_label_filtered(records, stats, options.gamma);
}

IdentificationQuality pseudo_label_precision(const std::vector<PseudoLabelRecord>& records,
                                             const corpus::Dataset& dataset) {
  std::unordered_map<std::string, corpus::Alignment> truth;
  for (const auto& s : dataset.samples) truth.emplace(s.id, s.c);
  IdentificationQuality q;
  std::size_t known = 0;
  for (const auto& r : records) {
    if (r.c_hat == kUnlabeled) throw UsageError("record '" + r.id + "' has no pseudo-label");
    auto it = truth.find(r.id);
    if (it == truth.end() || it->second == corpus::Alignment::kUnknown) continue;
    ++known;
    const bool actual = it->second == corpus::Alignment::kConflicting;
    const bool flagged = r.c_hat == 1;
    if (flagged && actual) ++q.true_positive;
    if (flagged && !actual) ++q.false_positive;
    if (!flagged && actual) ++q.false_negative;
  }
  if (known == 0) throw UsageError("no oracle bias labels available for pseudo-label evaluation");
  q.flagged = q.true_positive + q.false_positive;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  q.precision = q.flagged ? static_cast<double>(q.true_positive) / static_cast<double>(q.flagged) : nan;
  const std::size_t positives = q.true_positive + q.false_negative;
  q.recall = positives ? static_cast<double>(q.true_positive) / static_cast<double>(positives) : nan;
  return q;
}

std::size_t count_conflicting(const std::vector<PseudoLabelRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.c_hat == 1 ? 1 : 0;
  return n;
}

void write_pseudo_labels(const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path,
                         const std::vector<PseudoLabelRecord>& records, const LossStats& stats,
                         const PseudoLabelOptions& options) {
  std::ofstream csv(csv_path);
  if (!csv) throw ArtifactError("cannot write " + csv_path.string());
  csv << "id,y,y_hat,loss,c_hat\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    csv << r.id << ',' << r.y << ',' << r.y_hat << ',' << buf << ',' << r.c_hat << '\n';
  }
  if (!csv) throw ArtifactError("failed writing " + csv_path.string());
  json side = {{"mu", stats.mu},
               {"sigma", stats.sigma},
               {"gamma", options.gamma},
               {"n", stats.n},
               {"conflicting_count", count_conflicting(records)},
               {"mode", to_string(options.mode)},
               {"per_class_stats", options.per_class_stats}};
  std::ofstream js(sidecar_path);
  if (!js) throw ArtifactError("cannot write " + sidecar_path.string());
  js << side.dump(2) << '\n';
}

std::vector<PseudoLabelRecord> read_pseudo_labels(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw ArtifactError("cannot read pseudo-labels " + csv_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "id,y,y_hat,loss,c_hat") throw ArtifactError(csv_path.string() + ": unexpected header");
  std::vector<PseudoLabelRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& field : f) std::getline(ss, field, ',');
    try {
      out.push_back({f[0], std::stoi(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stoi(f[4])});
    } catch (const std::exception&) {
      throw ArtifactError(csv_path.string() + ": malformed row " + std::to_string(row));
    }
  }
  return out;
}

void save_amplifier(const std::filesystem::path& path, AmplifierModel& model, const json& extra_meta) {
  json meta = extra_meta;
  meta["role"] = "bias_amplifier";
  meta["provenance"] = model.provenance;
  meta["final_train_accuracy"] = model.final_train_accuracy;
  training::save_classifier(path, model.net, meta);
}

AmplifierModel load_amplifier(const std::filesystem::path& path) {
  auto loaded = training::load_classifier(path);
  if (loaded.meta.value("role", "") != "bias_amplifier") {
    throw ArtifactError(path.string() + " is not a bias amplifier checkpoint");
  }
  AmplifierModel m{std::move(loaded.model), loaded.meta.value("provenance", ""),
                   loaded.meta.value("final_train_accuracy", 0.0)};
  m.net.freeze();
  return m;
}

}  // namespace ddb::amplifier
