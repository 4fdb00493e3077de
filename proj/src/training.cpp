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

#include "ddb/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddb/container.hpp"
#include "ddb/errors.hpp"
#include "ddb/nn/optim.hpp"

namespace ddb::training {

using nlohmann::json;

void ClassifierTrainConfig::validate(const std::string& section) const {
  if (epochs < 0) throw ConfigError(section + ": epochs must be non-negative");
  if (batch_size < 1) throw ConfigError(section + ": batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError(section + ": lr must be positive");
  if (weight_decay < 0.0) throw ConfigError(section + ": weight_decay must be non-negative");
  if (crop_padding < 0) throw ConfigError(section + ": crop_padding must be non-negative");
  if (grad_accum_steps < 1) throw ConfigError(section + ": grad_accum_steps must be at least 1");
  if (widths.empty()) throw ConfigError(section + ": widths must be non-empty");
  for (int w : widths) {
    if (w < 4 || w % 4 != 0) throw ConfigError(section + ": widths must be positive multiples of 4");
  }
}

json ClassifierTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"augment", augment},
          {"crop_padding", crop_padding},
          {"grad_accum_steps", grad_accum_steps},
          {"widths", widths}};
}

ClassifierTrainConfig ClassifierTrainConfig::from_json(const json& j) {
  ClassifierTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.augment = j.value("augment", c.augment);
  c.crop_padding = j.value("crop_padding", c.crop_padding);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.widths = j.value("widths", c.widths);
  return c;
}

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    throw UsageError("cross_entropy: logits " + logits.shape_string() + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const int n = logits.dim(0), k = logits.dim(1);
  CrossEntropy out;
  out.losses.resize(n);
  out.predictions.resize(n);
  out.softmax_minus_onehot = Tensor({n, k});
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * k;
    if (labels[i] < 0 || labels[i] >= k) throw UsageError("cross_entropy: label out of range");
    int arg = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[arg]) arg = j;
    }
    const double mx = row[arg];
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = mx + std::log(z);
    out.losses[i] = log_z - row[labels[i]];
    out.predictions[i] = arg;
    float* g = out.softmax_minus_onehot.data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      g[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - log_z) - (j == labels[i] ? 1.0 : 0.0));
    }
  }
  return out;
}

Tensor augment_batch(const Tensor& batch, Rng& rng, int pad) {
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out(batch.shape());
  for (int i = 0; i < n; ++i) {
    const bool flip = rng.bernoulli(0.5);
    const int dy = pad > 0 ? rng.uniform_int(-pad, pad) : 0;
    const int dx = pad > 0 ? rng.uniform_int(-pad, pad) : 0;
    for (int ch = 0; ch < c; ++ch) {
      const float* src = batch.data() + (static_cast<std::size_t>(i) * c + ch) * h * w;
      float* dst = out.data() + (static_cast<std::size_t>(i) * c + ch) * h * w;
      for (int y = 0; y < h; ++y) {
        const int sy = y + dy;
        for (int x = 0; x < w; ++x) {
          int sx = x + dx;
          if (flip) sx = w - 1 - sx;
          dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : 0.0F;
        }
      }
    }
  }
  return out;
}

nn::ClassifierShape classifier_shape(const corpus::Dataset& dataset, const ClassifierTrainConfig& config) {
  nn::ClassifierShape s;
  s.channels = dataset.channels;
  s.height = dataset.height;
  s.width = dataset.width;
  s.num_classes = dataset.num_classes;
  s.widths = config.widths;
  return s;
}

Tensor predict_logits(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                      const std::vector<std::size_t>& indices, int chunk) {
  const int k = model.shape().num_classes;
  Tensor out({static_cast<int>(indices.size()), k});
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(chunk));
    const std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                        indices.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor logits = model.forward(dataset.batch(part));
    std::copy(logits.values().begin(), logits.values().end(), out.data() + start * k);
  }
  return out;
}

std::vector<int> predict_labels(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                                const std::vector<std::size_t>& indices) {
  const Tensor logits = predict_logits(model, dataset, indices);
  const int k = logits.dim(1);
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* row = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

BatchLoss mean_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  CrossEntropy ce = cross_entropy(logits, labels);
  BatchLoss out;
  const float scale = 1.0F / static_cast<float>(labels.size());
  for (double l : ce.losses) out.loss += l;
  out.loss /= static_cast<double>(labels.size());
  for (float& g : ce.softmax_minus_onehot.values()) g *= scale;
  out.grad_logits = std::move(ce.softmax_minus_onehot);
  out.sample_losses = std::move(ce.losses);
  out.predictions = std::move(ce.predictions);
  return out;
}

std::vector<EpochLog> train_loop(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                                 const std::vector<std::size_t>& indices, const ClassifierTrainConfig& config,
                                 std::uint64_t seed, const LoopHooks& hooks) {
  config.validate("training");
  if (indices.empty()) throw ConfigError("training: no training samples");
  const auto n = indices.size();
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const long batches_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total_updates =
      std::max(1L, (config.epochs * batches_per_epoch + config.grad_accum_steps - 1) / config.grad_accum_steps);

  nn::AdamW opt(model.params(), nn::AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const nn::CosineSchedule lr{config.lr, total_updates, config.warmup_fraction, 0.0};
  Rng rng(derive_seed(seed, {0xE53ULL}));
  const float accum_scale = 1.0F / static_cast<float>(config.grad_accum_steps);

  std::vector<EpochLog> logs;
  std::vector<std::size_t> order = indices;
  long micro = 0;
  opt.zero_grad();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (hooks.order) {
      order = hooks.order(rng);
    } else {
      std::shuffle(order.begin(), order.end(), rng.engine());
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::vector<std::size_t> part(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      Tensor x = dataset.batch(part);
      if (config.augment) x = augment_batch(x, rng, config.crop_padding);
      std::vector<int> labels(part.size());
      for (std::size_t i = 0; i < part.size(); ++i) labels[i] = dataset.samples[part[i]].y;
      const Tensor logits = model.forward(x);
      BatchLoss bl = hooks.loss ? hooks.loss(x, logits, part, labels) : mean_cross_entropy(logits, labels);
      if (!std::isfinite(bl.loss)) {
        throw TrainingError("classifier loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(start / bs));
      }
      loss_sum += std::accumulate(bl.sample_losses.begin(), bl.sample_losses.end(), 0.0);
      for (std::size_t i = 0; i < part.size(); ++i) correct += bl.predictions[i] == labels[i] ? 1 : 0;
      if (hooks.on_batch) hooks.on_batch(part, bl);
      model.backward(bl.grad_logits);
      if (++micro % config.grad_accum_steps == 0) {
        opt.step(lr.lr_at(opt.steps_taken()), accum_scale);
        opt.zero_grad();
      }
    }
    const auto seen = static_cast<double>(order.size());
    EpochLog log{epoch, loss_sum / seen, static_cast<double>(correct) / seen};
    logs.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
  if (micro % config.grad_accum_steps != 0) opt.step(lr.lr_at(opt.steps_taken()), accum_scale);
  return logs;
}

std::vector<EpochLog> train_erm(nn::ConvClassifier& model, const corpus::Dataset& dataset,
                                const std::vector<std::size_t>& indices, const ClassifierTrainConfig& config,
                                std::uint64_t seed, const EpochCallback& on_epoch) {
  LoopHooks hooks;
  hooks.on_epoch = on_epoch;
  return train_loop(model, dataset, indices, config, seed, hooks);
}

double accuracy(nn::ConvClassifier& model, const corpus::Dataset& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  const auto pred = predict_labels(model, dataset, indices);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) correct += pred[i] == dataset.samples[indices[i]].y ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

void save_classifier(const std::filesystem::path& path, nn::ConvClassifier& model, const json& meta) {
  json m = meta;
  m["kind"] = "classifier";
  m["shape"] = model.shape().to_json();
  write_container(path, m, model.state());
}

LoadedClassifier load_classifier(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.meta.value("kind", "") != "classifier") throw ArtifactError(path.string() + " is not a classifier checkpoint");
  LoadedClassifier out{nn::ConvClassifier(nn::ClassifierShape::from_json(c.meta.at("shape")), 0), c.meta};
  out.model.load_state(c.tensors);
  return out;
}

}  // namespace ddb::training
