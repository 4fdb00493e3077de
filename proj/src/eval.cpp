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

#include "ddb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ddb/errors.hpp"
#include "ddb/training.hpp"

namespace ddb::eval {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json nan_to_null(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return out;
}

json nan_to_null(double x) { return std::isnan(x) ? json(nullptr) : json(x); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

json GroupMetrics::to_json() const {
  return {{"num_classes", num_classes},
          {"num_bias_attributes", num_bias_attributes},
          {"group_acc", nan_to_null(group_acc)},
          {"group_count", group_count},
          {"average_acc", nan_to_null(average_acc)},
          {"worst_group_acc", nan_to_null(worst_group_acc)},
          {"conflicting_acc", nan_to_null(conflicting_acc)},
          {"conflicting_acc_per_class", nan_to_null(conflicting_acc_per_class)},
          {"n", n},
          {"n_unknown_bias", n_unknown_bias}};
}

GroupMetrics group_metrics(const corpus::Dataset& dataset, const std::vector<std::size_t>& indices,
                           const std::vector<int>& predictions) {
  if (indices.empty()) throw UsageError("evaluation set is empty");
  if (indices.size() != predictions.size()) throw UsageError("prediction count does not match evaluation set");
  GroupMetrics m;
  m.num_classes = dataset.num_classes;
  m.num_bias_attributes = dataset.num_bias_attributes();
  const int groups = dataset.num_oracle_groups();
  std::vector<double> hit(groups, 0.0);
  m.group_count.assign(groups, 0);
  std::vector<double> conf_hit(m.num_classes, 0.0), conf_n(m.num_classes, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = dataset.samples[indices[i]];
    const double ok = predictions[i] == s.y ? 1.0 : 0.0;
    correct += ok;
    if (s.b == corpus::kUnknownBias) {
      ++m.n_unknown_bias;
      continue;
    }
    const int g = s.y * m.num_bias_attributes + s.b;
    hit[g] += ok;
    ++m.group_count[g];
    if (dataset.alignment_of(s.y, s.b) == corpus::Alignment::kConflicting) {
      conf_hit[s.y] += ok;
      conf_n[s.y] += 1.0;
    }
  }
  m.n = indices.size();
  m.average_acc = correct / static_cast<double>(m.n);
  m.group_acc.assign(groups, kNaN);
  m.worst_group_acc = kNaN;
  for (int g = 0; g < groups; ++g) {
    if (m.group_count[g] == 0) continue;
    m.group_acc[g] = hit[g] / static_cast<double>(m.group_count[g]);
    if (std::isnan(m.worst_group_acc) || m.group_acc[g] < m.worst_group_acc) m.worst_group_acc = m.group_acc[g];
  }
  double all_hit = 0.0, all_n = 0.0;
  for (int y = 0; y < m.num_classes; ++y) {
    m.conflicting_acc_per_class.push_back(conf_n[y] > 0 ? conf_hit[y] / conf_n[y] : kNaN);
    all_hit += conf_hit[y];
    all_n += conf_n[y];
  }
  m.conflicting_acc = all_n > 0 ? all_hit / all_n : kNaN;
  return m;
}

GroupMetrics evaluate_groups(nn::ConvClassifier& model, const corpus::Dataset& dataset, corpus::Split split) {
  const auto idx = dataset.indices(split);
  if (idx.empty()) throw UsageError("no " + corpus::to_string(split) + " samples to evaluate");
  return group_metrics(dataset, idx, training::predict_labels(model, dataset, idx));
}

json GapMetrics::to_json() const {
  json g = json::object();
  for (const auto& [k, v] : gaps) g[std::to_string(k)] = nan_to_null(v);
  return {{"id_acc", nan_to_null(id_acc)}, {"gaps", g}};
}

std::vector<double> train_group_proportions(const corpus::Dataset& dataset) {
  std::vector<double> p(dataset.num_oracle_groups(), 0.0);
  double n = 0.0;
  for (const auto& s : dataset.samples) {
    if (s.split != corpus::Split::kTrain || s.b == corpus::kUnknownBias) continue;
    p[s.y * dataset.num_bias_attributes() + s.b] += 1.0;
    n += 1.0;
  }
  if (n == 0.0) throw UsageError("no training samples with known bias attribute");
  for (double& v : p) v /= n;
  return p;
}

std::vector<int> minority_groups(const corpus::Dataset& dataset) {
  std::vector<int> out;
  for (int y = 0; y < dataset.num_classes; ++y) {
    for (int b = 0; b < dataset.num_bias_attributes(); ++b) {
      if (b != corpus::Dataset::aligned_attribute(y)) out.push_back(y * dataset.num_bias_attributes() + b);
    }
  }
  return out;
}

GapMetrics compute_gaps(const std::vector<double>& group_acc, const std::vector<double>& proportions,
                        const std::vector<int>& minority) {
  if (group_acc.size() != proportions.size()) throw UsageError("group proportions do not match the group count");
  double total = 0.0;
  for (double p : proportions) {
    if (p < 0.0) throw UsageError("group proportions must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw UsageError("group proportions sum to " + fmt("%.9g", total) + ", not 1");
  GapMetrics out;
  for (std::size_t g = 0; g < proportions.size(); ++g) {
    if (proportions[g] == 0.0) continue;
    if (std::isnan(group_acc[g])) {
      throw UsageError("group " + std::to_string(g) + " has training mass but no evaluation samples");
    }
    out.id_acc += proportions[g] * group_acc[g];
  }
  for (int g : minority) {
    if (g < 0 || static_cast<std::size_t>(g) >= group_acc.size()) throw UsageError("minority group out of range");
    out.gaps[g] = out.id_acc - group_acc[g];
  }
  return out;
}

GapMetrics evaluate_gaps(const GroupMetrics& metrics, const std::vector<double>& proportions,
                         const std::vector<int>& minority) {
  return compute_gaps(metrics.group_acc, proportions, minority);
}

BiasOracle color_oracle_for(const corpus::Dataset& dataset) {
  return [&dataset](const corpus::LabeledSample& s) -> std::optional<int> {
    if (!dataset.normalization) {
      return corpus::color_oracle(s.image, dataset.channels, dataset.height, dataset.width, dataset.bias_attributes);
    }
    std::vector<float> raw(s.image);
    const std::size_t plane = static_cast<std::size_t>(dataset.height) * dataset.width;
    for (int c = 0; c < dataset.channels; ++c) {
      for (std::size_t k = 0; k < plane; ++k) {
        float& v = raw[c * plane + k];
        v = v * dataset.normalization->std[c] + dataset.normalization->mean[c];
      }
    }
    return corpus::color_oracle(raw, dataset.channels, dataset.height, dataset.width, dataset.bias_attributes);
  };
}

GenerationBias measure_generation_bias(const corpus::Dataset& images, const BiasOracle& oracle,
                                       std::optional<corpus::Split> split) {
  GenerationBias out;
  std::vector<double> aligned(images.num_classes, 0.0), seen(images.num_classes, 0.0);
  for (const auto& s : images.samples) {
    if (split && s.split != *split) continue;
    ++out.n;
    const auto b = oracle(s);
    if (!b) {
      ++out.oracle_failures;
      continue;
    }
    seen[s.y] += 1.0;
    if (*b == corpus::Dataset::aligned_attribute(s.y)) aligned[s.y] += 1.0;
  }
  if (out.n == 0) throw UsageError("no images to measure");
  if (static_cast<double>(out.oracle_failures) >= 0.01 * static_cast<double>(out.n)) {
    throw OracleError("bias oracle failed on " + std::to_string(out.oracle_failures) + " of " +
                      std::to_string(out.n) + " images (limit is under 1%)");
  }
  double sum = 0.0;
  int classes = 0;
  for (int y = 0; y < images.num_classes; ++y) {
    out.per_class.push_back(seen[y] > 0 ? aligned[y] / seen[y] : kNaN);
    if (seen[y] > 0) {
      sum += aligned[y] / seen[y];
      ++classes;
    }
  }
  out.rho = classes ? sum / classes : kNaN;
  return out;
}

std::string loss_histogram_svg(const std::vector<amplifier::PseudoLabelRecord>& records,
                               const amplifier::LossStats& stats, double gamma, int bins) {
  const double W = 640, H = 360, L = 50, R = 20, T = 30, B = 40;
  const double threshold = stats.mu + gamma * stats.sigma;
  double hi = threshold;
  for (const auto& r : records) hi = std::max(hi, r.loss);
  hi = hi > 0 ? hi * 1.05 : 1.0;
  std::vector<int> all(bins, 0), flagged(bins, 0);
  for (const auto& r : records) {
    const int k = std::min(bins - 1, static_cast<int>(r.loss / hi * bins));
    ++all[k];
    if (r.c_hat == 1) ++flagged[k];
  }
  const int peak = std::max(1, *std::max_element(all.begin(), all.end()));
  const double pw = W - L - R, ph = H - T - B, bw = pw / bins;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">Bias amplifier loss on real training samples (log count)</text>\n";
  const double log_peak = std::log1p(peak);
  for (int k = 0; k < bins; ++k) {
    const double h_all = ph * std::log1p(all[k]) / log_peak;
    const double h_flag = all[k] ? h_all * flagged[k] / all[k] : 0.0;
    const double x = L + k * bw;
    o << "<rect x=\"" << x << "\" y=\"" << T + ph - h_all << "\" width=\"" << bw - 1 << "\" height=\"" << h_all
      << "\" fill=\"#7a9cc6\"/>\n";
    if (h_flag > 0) {
      o << "<rect x=\"" << x << "\" y=\"" << T + ph - h_flag << "\" width=\"" << bw - 1 << "\" height=\"" << h_flag
        << "\" fill=\"#d0543c\"/>\n";
    }
  }
  const double tx = L + pw * threshold / hi;
  o << "<line x1=\"" << tx << "\" x2=\"" << tx << "\" y1=\"" << T << "\" y2=\"" << T + ph
    << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  o << "<text x=\"" << tx + 4 << "\" y=\"" << T + 12 << "\">mu + " << fmt("%g", gamma)
    << " sigma = " << fmt("%.3f", threshold) << "</text>\n";
  o << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << T + ph << "\" y2=\"" << T + ph
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L << "\" y=\"" << H - 12 << "\">0</text>\n";
  o << "<text x=\"" << L + pw - 40 << "\" y=\"" << H - 12 << "\">" << fmt("%.2f", hi) << "</text>\n";
  o << "<text x=\"" << L + pw / 2 - 60 << "\" y=\"" << H - 12 << "\">cross-entropy loss (red: flagged)</text>\n";
  o << "</svg>\n";
  return o.str();
}

std::string group_accuracy_svg(const GroupMetrics& metrics, const std::vector<std::string>& bias_attributes,
                               const std::string& title) {
  const int groups = static_cast<int>(metrics.group_acc.size());
  const double L = 50, R = 20, T = 30, B = 60, bw = 48;
  const double W = L + R + std::max(1, groups) * bw, H = 320, ph = H - T - B;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  for (int g = 0; g < groups; ++g) {
    const int y = g / metrics.num_bias_attributes, b = g % metrics.num_bias_attributes;
    const double acc = std::isnan(metrics.group_acc[g]) ? 0.0 : metrics.group_acc[g];
    const double h = ph * acc;
    const double x = L + g * bw;
    const bool aligned = b == corpus::Dataset::aligned_attribute(y);
    o << "<rect x=\"" << x + 4 << "\" y=\"" << T + ph - h << "\" width=\"" << bw - 8 << "\" height=\"" << h
      << "\" fill=\"" << (aligned ? "#7a9cc6" : "#d0543c") << "\"/>\n";
    o << "<text x=\"" << x + 6 << "\" y=\"" << T + ph - h - 3 << "\">"
      << (std::isnan(metrics.group_acc[g]) ? std::string("n/a") : fmt("%.2f", acc)) << "</text>\n";
    const std::string attr = b < static_cast<int>(bias_attributes.size()) ? bias_attributes[b] : std::to_string(b);
    o << "<text x=\"" << x + 6 << "\" y=\"" << T + ph + 14 << "\">y=" << y << "</text>\n";
    o << "<text x=\"" << x + 6 << "\" y=\"" << T + ph + 28 << "\">" << attr << "</text>\n";
  }
  o << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << T + ph << "\" y2=\"" << T + ph
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L << "\" y=\"" << H - 8 << "\">WGA " << fmt("%.3f", metrics.worst_group_acc) << ", average "
    << fmt("%.3f", metrics.average_acc) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace ddb::eval
