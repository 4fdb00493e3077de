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

#include <vector>

#include "ddb/nn/layers.hpp"

namespace ddb::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Linear warm-up over the first warmup_fraction of steps, then cosine decay
// towards min_lr_ratio * base_lr.
struct CosineSchedule {
  double base_lr = 1e-4;
  long total_steps = 1;
  double warmup_fraction = 0.1;
  double min_lr_ratio = 0.0;

  double lr_at(long step) const;
};

// Decoupled weight decay Adam. Step count and moments live here; the
// parameters are borrowed from the owning model.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig config);

  void zero_grad() { nn::zero_grad(params_); }
  // Scales accumulated gradients by grad_scale (e.g. 1/accumulation_steps)
  // and applies one update with the given learning rate.
  void step(double lr, float grad_scale = 1.0F);
  long steps_taken() const { return t_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

}  // namespace ddb::nn
