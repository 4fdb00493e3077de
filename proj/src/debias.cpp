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

#include "ddb/debias.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "ddb/errors.hpp"

namespace ddb::debias {

using nlohmann::json;

GroupAssignment make_groups(const corpus::Dataset& dataset,
                            const std::vector<amplifier::PseudoLabelRecord>& pseudo_labels) {
  std::unordered_map<std::string, const amplifier::PseudoLabelRecord*> by_id;
  for (const auto& r : pseudo_labels) by_id.emplace(r.id, &r);

  GroupAssignment g;
  g.num_groups = 2 * dataset.num_classes;
  g.counts.assign(g.num_groups, 0);
  g.lookup.assign(dataset.samples.size(), -1);
  for (std::size_t i : dataset.indices(corpus::Split::kTrain)) {
    const auto& s = dataset.samples[i];
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw UsageError("training sample '" + s.id + "' has no pseudo-label");
    const auto& rec = *it->second;
    if (rec.c_hat != 0 && rec.c_hat != 1) throw UsageError("pseudo-label for '" + s.id + "' is not 0 or 1");
    if (rec.y != s.y) throw UsageError("pseudo-label for '" + s.id + "' disagrees with the sample's class");
    const int gid = s.y * 2 + rec.c_hat;
    g.sample_indices.push_back(i);
    g.group_of.push_back(gid);
    g.lookup[i] = gid;
    ++g.counts[gid];
  }
  for (int k = 0; k < g.num_groups; ++k) {
    if (g.counts[k] == 0) g.empty_groups.push_back(k);
  }
  return g;
}

GDROState GDROState::uniform(const std::vector<bool>& active, double eta, bool reweight_groups) {
  GDROState s;
  s.eta = eta;
  s.reweight_groups = reweight_groups;
  const auto n = std::count(active.begin(), active.end(), true);
  if (n == 0) throw TrainingError("G-DRO: every group is empty");
  s.q.assign(active.size(), 0.0);
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (active[k]) s.q[k] = 1.0 / static_cast<double>(n);
  }
  return s;
}

void gdro_update(GDROState& state, std::span<const double> group_losses) {
  if (group_losses.size() != state.q.size()) throw UsageError("G-DRO: group loss count does not match q");
  double z = 0.0;
  for (std::size_t k = 0; k < state.q.size(); ++k) {
    state.q[k] *= std::exp(state.eta * group_losses[k]);
    z += state.q[k];
  }
  if (!(z > 0.0) || !std::isfinite(z)) throw TrainingError("G-DRO: group weights degenerated");
  for (double& v : state.q) v /= z;
}

training::BatchLoss gdro_batch_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> groups,
                                    GDROState& state, std::vector<double>* group_losses,
                                    std::vector<std::size_t>* group_counts) {
  const std::size_t k = state.q.size();
  auto ce = training::cross_entropy(logits, labels);
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (groups[i] < 0 || static_cast<std::size_t>(groups[i]) >= k) throw UsageError("G-DRO: sample outside groups");
    sum[groups[i]] += ce.losses[i];
    ++count[groups[i]];
  }
  std::vector<double> mean(k, 0.0);
  bool any = false;
  for (std::size_t g = 0; g < k; ++g) {
    if (count[g] > 0) {
      mean[g] = sum[g] / static_cast<double>(count[g]);
      any = true;
    }
  }
  if (!any) throw TrainingError("G-DRO: batch contains no group samples");
  gdro_update(state, mean);

  training::BatchLoss out;
  for (std::size_t g = 0; g < k; ++g) out.loss += state.q[g] * mean[g];
  const int classes = logits.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto scale = static_cast<float>(state.q[groups[i]] / static_cast<double>(count[groups[i]]));
    float* row = ce.softmax_minus_onehot.data() + i * classes;
    for (int j = 0; j < classes; ++j) row[j] *= scale;
  }
  out.grad_logits = std::move(ce.softmax_minus_onehot);
  out.sample_losses = std::move(ce.losses);
  out.predictions = std::move(ce.predictions);
  if (group_losses) *group_losses = std::move(mean);
  if (group_counts) *group_counts = std::move(count);
  return out;
}

double reweight_factor(double amplifier_loss, double target_loss) {
  const double denom = target_loss + amplifier_loss;
  if (denom == 0.0) return 0.0;
  return amplifier_loss / denom;
}

Recipe2Batch recipe2_batch_loss(nn::ConvClassifier& frozen_amplifier, const Tensor& x, const Tensor& target_logits,
                                std::span<const int> labels) {
  if (!frozen_amplifier.frozen()) throw ContractViolation("recipe2 requires a frozen bias amplifier");
  const auto amp = training::cross_entropy(frozen_amplifier.forward(x), labels);
  auto ce = training::cross_entropy(target_logits, labels);
  Recipe2Batch out;
  out.amplifier_loss = amp.losses;
  out.r.resize(labels.size());
  const auto n = static_cast<double>(labels.size());
  const int classes = target_logits.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double r = reweight_factor(amp.losses[i], ce.losses[i]);
    out.r[i] = r;
    out.loss.loss += r * ce.losses[i] / n;
    const auto scale = static_cast<float>(r / n);
    float* row = ce.softmax_minus_onehot.data() + i * classes;
    for (int j = 0; j < classes; ++j) row[j] *= scale;
  }
  out.loss.grad_logits = std::move(ce.softmax_minus_onehot);
  out.loss.sample_losses = std::move(ce.losses);
  out.loss.predictions = std::move(ce.predictions);
  return out;
}

double recipe2_step(nn::ConvClassifier& target, nn::ConvClassifier& frozen_amplifier, const Tensor& x,
                    std::span<const int> labels) {
  const Tensor logits = target.forward(x);
  auto batch = recipe2_batch_loss(frozen_amplifier, x, logits, labels);
  target.backward(batch.loss.grad_logits);
  return batch.loss.loss;
}

RecipeId recipe_from_string(const std::string& s) {
  if (s == "recipe1") return RecipeId::kRecipe1;
  if (s == "recipe2") return RecipeId::kRecipe2;
  if (s == "erm") return RecipeId::kErm;
  throw ConfigError("unknown recipe '" + s + "' (expected recipe1, recipe2 or erm)");
}

std::string to_string(RecipeId r) {
  switch (r) {
    case RecipeId::kRecipe1:
      return "recipe1";
    case RecipeId::kRecipe2:
      return "recipe2";
    case RecipeId::kErm:
      return "erm";
  }
  return "?";
}

json RecipeConfig::to_json() const {
  json j = train.to_json();
  j["id"] = to_string(id);
  j["eta"] = eta;
  j["reweight_groups"] = reweight_groups;
  return j;
}

RecipeConfig RecipeConfig::from_json(const json& j) {
  RecipeConfig c;
  c.train = training::ClassifierTrainConfig::from_json(j);
  c.id = recipe_from_string(j.value("id", std::string("recipe1")));
  c.eta = j.value("eta", c.eta);
  c.reweight_groups = j.value("reweight_groups", c.reweight_groups);
  if (!std::isfinite(c.eta) || c.eta < 0.0) throw ConfigError("recipe: eta must be a finite non-negative number");
  c.train.validate("recipe");
  return c;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch},       {"recipe", recipe}, {"per_group_loss", per_group_loss},
          {"per_group_acc", per_group_acc}, {"q", q}, {"train_acc", train_acc}, {"seed", seed}};
}

RecipeResult train_recipe(const RecipeConfig& config, const RecipeInputs& inputs, std::uint64_t seed,
                          const WarningFn& warn) {
  if (inputs.train == nullptr) throw ConfigError("train: no training dataset");
  if (config.id == RecipeId::kRecipe1 && inputs.groups == nullptr) {
    throw ConfigError("recipe1 requires pseudo-label groups; the pseudo_labels artifact is missing");
  }
  if (config.id == RecipeId::kRecipe2 && inputs.amplifier == nullptr) {
    throw ConfigError("recipe2 requires a bias amplifier; the amplifier artifact is missing");
  }
  if (config.id == RecipeId::kRecipe2 && !inputs.amplifier->frozen()) {
    throw ContractViolation("recipe2 requires a frozen bias amplifier");
  }
  config.train.validate("recipe");
  const corpus::Dataset& data = *inputs.train;

  RecipeResult result{nn::ConvClassifier(training::classifier_shape(data, config.train), derive_seed(seed, {0x7A})),
                      {}, {}};
  auto note = [&](const std::string& msg) {
    result.warnings.push_back(msg);
    if (warn) warn(msg);
  };

  // Groups used for logging: pseudo-groups when available, else classes.
  const GroupAssignment* groups = inputs.groups;
  std::vector<std::size_t> indices = groups ? groups->sample_indices : data.indices(corpus::Split::kTrain);
  const int log_groups = groups ? groups->num_groups : data.num_classes;
  auto log_group = [&](std::size_t dataset_index) {
    return groups ? groups->lookup[dataset_index] : data.samples[dataset_index].y;
  };

  std::optional<GDROState> state;
  std::vector<std::vector<std::size_t>> members;
  if (config.id == RecipeId::kRecipe1) {
    std::vector<bool> active(groups->num_groups);
    for (int g = 0; g < groups->num_groups; ++g) active[g] = groups->counts[g] > 0;
    for (int g : groups->empty_groups) {
      note("pseudo-group " + std::to_string(g) + " (class " + std::to_string(g / 2) +
           (g % 2 ? ", conflicting" : ", aligned") + ") is empty; G-DRO continues over the non-empty groups");
    }
    state = GDROState::uniform(active, config.eta, config.reweight_groups);
    members.resize(groups->num_groups);
    for (std::size_t i = 0; i < groups->sample_indices.size(); ++i) {
      members[groups->group_of[i]].push_back(groups->sample_indices[i]);
    }
  }

  std::vector<double> loss_sum(log_groups), correct(log_groups), seen(log_groups);
  training::LoopHooks hooks;
  if (config.id == RecipeId::kRecipe1) {
    hooks.loss = [&](const Tensor&, const Tensor& logits, const std::vector<std::size_t>& batch,
                     std::span<const int> labels) {
      std::vector<int> gids(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) gids[i] = groups->lookup[batch[i]];
      return gdro_batch_loss(logits, labels, gids, *state);
    };
    if (config.reweight_groups) {
      hooks.order = [&](Rng& rng) {
        std::vector<int> nonempty;
        for (int g = 0; g < groups->num_groups; ++g) {
          if (!members[g].empty()) nonempty.push_back(g);
        }
        std::vector<std::size_t> order(indices.size());
        for (auto& o : order) {
          const auto& m = members[nonempty[rng.uniform_int(0, static_cast<int>(nonempty.size()) - 1)]];
          o = m[rng.uniform_int(0, static_cast<int>(m.size()) - 1)];
        }
        return order;
      };
    }
  } else if (config.id == RecipeId::kRecipe2) {
    hooks.loss = [&](const Tensor& x, const Tensor& logits, const std::vector<std::size_t>&,
                     std::span<const int> labels) {
      return recipe2_batch_loss(*inputs.amplifier, x, logits, labels).loss;
    };
  }
  hooks.on_batch = [&](const std::vector<std::size_t>& batch, const training::BatchLoss& bl) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int g = log_group(batch[i]);
      loss_sum[g] += bl.sample_losses[i];
      correct[g] += bl.predictions[i] == data.samples[batch[i]].y ? 1.0 : 0.0;
      seen[g] += 1.0;
    }
  };
  hooks.on_epoch = [&](const training::EpochLog& e) {
    EpochRecord rec;
    rec.epoch = e.epoch;
    rec.recipe = to_string(config.id);
    rec.train_acc = e.train_accuracy;
    rec.seed = seed;
    for (int g = 0; g < log_groups; ++g) {
      rec.per_group_loss.push_back(seen[g] > 0 ? loss_sum[g] / seen[g] : 0.0);
      rec.per_group_acc.push_back(seen[g] > 0 ? correct[g] / seen[g] : 0.0);
    }
    if (state) rec.q = state->q;
    result.log.push_back(std::move(rec));
    std::fill(loss_sum.begin(), loss_sum.end(), 0.0);
    std::fill(correct.begin(), correct.end(), 0.0);
    std::fill(seen.begin(), seen.end(), 0.0);
  };

  training::train_loop(result.model, data, indices, config.train, derive_seed(seed, {0x7A, 1}), hooks);
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path.string());
  for (const auto& rec : log) out << rec.to_json().dump() << '\n';
}

}  // namespace ddb::debias
