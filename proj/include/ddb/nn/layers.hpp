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

#include <string>
#include <vector>

#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

// Minimal layer set for the desk-scale denoiser and classifiers. Every layer
// caches what its backward pass needs during forward; calling backward
// accumulates into Param::grad and returns the gradient w.r.t. the input.
namespace ddb::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // subject to decoupled weight decay
};

using ParamList = std::vector<Param*>;

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad,
         Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(ParamList& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Param weight_, bias_;
  std::vector<float> cols_;
  int n_ = 0, h_ = 0, w_ = 0, ho_ = 0, wo_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features, Rng& rng);

  // x: [N, in] -> [N, out]
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(ParamList& out);

 private:
  int in_ = 0, out_ = 0;
  Param weight_, bias_;
  Tensor input_;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const std::string& name, int groups, int channels);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(ParamList& out);

 private:
  int groups_ = 1, channels_ = 0;
  Param gamma_, beta_;
  Tensor xhat_;
  std::vector<float> inv_std_;  // [N * groups]
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, int vocab, int dim, Rng& rng);

  Tensor forward(const std::vector<int>& indices);
  void backward(const Tensor& grad_out);
  void collect(ParamList& out);
  int vocab() const { return vocab_; }

 private:
  int vocab_ = 0, dim_ = 0;
  Param table_;
  std::vector<int> indices_;
};

class SiLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

 private:
  Tensor input_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

 private:
  Tensor input_;
};

// Stateless shape ops.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_out);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor global_avg_pool_backward(const Tensor& grad_out, int height, int width);
Tensor upsample2(const Tensor& x);  // nearest neighbour
Tensor upsample2_backward(const Tensor& grad_out);
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& grad, int channels_a, Tensor& grad_a, Tensor& grad_b);
// x[n,c,:,:] += bias[n,c]
void add_channel_bias(Tensor& x, const Tensor& bias);
// Sums grad over spatial axes: [N,C,H,W] -> [N,C]
Tensor channel_bias_grad(const Tensor& grad);
void add_inplace(Tensor& dst, const Tensor& src);

// Sinusoidal encoding of integer timesteps: [N] -> [N, dim].
Tensor timestep_encoding(const std::vector<int>& timesteps, int dim);

void zero_grad(const ParamList& params);

}  // namespace ddb::nn
