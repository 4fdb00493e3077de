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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddb/container.hpp"
#include "ddb/nn/layers.hpp"
#include "json.hpp"

namespace ddb::nn {

// Noise predictor eps(x_t, t, y). Condition index == null_condition() selects
// the unconditional mode.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> conditions) = 0;
  // Gradient of the loss w.r.t. the last prediction; no-op for fixed stubs.
  virtual void backward(const Tensor& /*grad_prediction*/) {}
  virtual int null_condition() const = 0;
};

struct DenoiserShape {
  int channels = 3;
  int height = 16;
  int width = 16;
  int num_classes = 2;
  int base_channels = 16;
  int embed_dim = 64;
  int groups = 4;

  nlohmann::json to_json() const;
  static DenoiserShape from_json(const nlohmann::json& j);
};

class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in_channels, int out_channels, int embed_dim, int groups, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& emb);
  // Returns d/dx and accumulates d/d(emb) into grad_emb.
  Tensor backward(const Tensor& grad_out, Tensor& grad_emb);
  void collect(ParamList& out);

 private:
  GroupNorm norm1_, norm2_;
  SiLU act1_, act2_;
  Conv2d conv1_, conv2_;
  Linear emb_proj_;
  bool has_skip_ = false;
  Conv2d skip_;
};

// Two-level convolutional encoder-decoder with skip connections. Timestep and
// class embeddings are summed and injected as per-channel biases in every
// residual block. The class table has num_classes + 1 rows; the last row is
// the null condition.
class UNetDenoiser final : public NoisePredictor {
 public:
  UNetDenoiser(DenoiserShape shape, std::uint64_t seed);

  Tensor predict(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> conditions) override;
  void backward(const Tensor& grad_prediction) override;
  int null_condition() const override { return shape_.num_classes; }

  const DenoiserShape& shape() const { return shape_; }
  ParamList params();
  std::vector<NamedTensor> state();
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  DenoiserShape shape_;
  Linear time_fc1_, time_fc2_;
  SiLU time_act_, emb_act_;
  Embedding class_embed_;
  Conv2d conv_in_, down1_, down2_, conv_out_;
  ResBlock block1_, block2_, mid_, up2_, up1_;
  GroupNorm norm_out_;
  SiLU act_out_;
  int c1_ = 0, c2_ = 0;
  int h1_ = 0, w1_ = 0, h2_ = 0, w2_ = 0;
};

struct ClassifierShape {
  int channels = 3;
  int height = 16;
  int width = 16;
  int num_classes = 2;
  std::vector<int> widths{16, 32, 64};
  int groups = 4;

  nlohmann::json to_json() const;
  static ClassifierShape from_json(const nlohmann::json& j);
};

// conv-norm-relu stages with 2x average pooling between them, global average
// pooling and a single linear head.
class ConvClassifier {
 public:
  ConvClassifier(ClassifierShape shape, std::uint64_t seed);

  // x: [N,C,H,W] -> logits [N, num_classes]
  Tensor forward(const Tensor& x);
  void backward(const Tensor& grad_logits);

  // A frozen model refuses backward passes.
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  const ClassifierShape& shape() const { return shape_; }
  ParamList params();
  std::vector<NamedTensor> state();
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  struct Stage {
    Conv2d conv;
    GroupNorm norm;
    ReLU act;
  };
  ClassifierShape shape_;
  std::vector<Stage> stages_;
  Linear head_;
  int last_h_ = 0, last_w_ = 0;
  bool frozen_ = false;
};

std::vector<NamedTensor> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<NamedTensor>& tensors);

}  // namespace ddb::nn
