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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddb/corpus.hpp"
#include "ddb/nn/models.hpp"
#include "ddb/rng.hpp"
#include "json.hpp"

// Classifier plumbing shared by the bias amplifier and the target models.
namespace ddb::training {

struct ClassifierTrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.0;
  bool augment = true;
  int crop_padding = 2;
  int grad_accum_steps = 1;
  std::vector<int> widths{16, 32, 64};

  void validate(const std::string& section) const;
  nlohmann::json to_json() const;
  static ClassifierTrainConfig from_json(const nlohmann::json& j);
};

struct CrossEntropy {
  std::vector<double> losses;  // per sample
  std::vector<int> predictions;
  Tensor softmax_minus_onehot;  // d loss_i / d logits_i, unscaled
};

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels);

// Random horizontal flip and random crop after zero-padding by `pad`.
Tensor augment_batch(const Tensor& batch, Rng& rng, int pad);

nn::ClassifierShape classifier_shape(const corpus::Dataset& dataset, const ClassifierTrainConfig& config);

// Inference in fixed-size chunks; rows follow `indices`.
Tensor predict_logits(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                      const std::vector<std::size_t>& indices, int chunk = 256);
std::vector<int> predict_labels(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                                const std::vector<std::size_t>& indices);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};
using EpochCallback = std::function<void(const EpochLog&)>;

// Loss for one minibatch: the scalar objective, its gradient w.r.t. the
// logits, and per-sample diagnostics. `x` is the (augmented) model input.
struct BatchLoss {
  double loss = 0.0;
  Tensor grad_logits;
  std::vector<double> sample_losses;
  std::vector<int> predictions;
};
using BatchLossFn = std::function<BatchLoss(const Tensor& x, const Tensor& logits,
                                            const std::vector<std::size_t>& batch, std::span<const int> labels)>;
// Visit order for one epoch (dataset indices, repeats allowed).
using EpochOrderFn = std::function<std::vector<std::size_t>(Rng& rng)>;

struct LoopHooks {
  BatchLossFn loss;      // defaults to mean cross-entropy
  EpochOrderFn order;    // defaults to a shuffle of the training indices
  std::function<void(const std::vector<std::size_t>& batch, const BatchLoss&)> on_batch;
  EpochCallback on_epoch;
};

BatchLoss mean_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Minibatch training with AdamW, cosine learning rate and gradient
// accumulation. Deterministic in (seed, config, data, hooks).
std::vector<EpochLog> train_loop(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                                 const std::vector<std::size_t>& indices, const ClassifierTrainConfig& config,
                                 std::uint64_t seed, const LoopHooks& hooks);

// Plain cross-entropy training over `indices`.
std::vector<EpochLog> train_erm(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                                const std::vector<std::size_t>& indices, const ClassifierTrainConfig& config,
                                std::uint64_t seed, const EpochCallback& on_epoch = {});

double accuracy(nn::ConvClassifier& model, const corpus::Dataset& dataset, const std::vector<std::size_t>& indices);

void save_classifier(const std::filesystem::path& path, nn::ConvClassifier& model, const nlohmann::json& meta);
struct LoadedClassifier {
  nn::ConvClassifier model;
  nlohmann::json meta;
};
LoadedClassifier load_classifier(const std::filesystem::path& path);

}  // namespace ddb::training
