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

#include "ddb/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ddb::nn {

double CosineSchedule::lr_at(long step) const {
  const long warmup = static_cast<long>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long span = std::max(1L, total_steps - warmup);
  const double progress = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(span), 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base_lr * (min_lr_ratio + (1.0 - min_lr_ratio) * cosine);
}

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.emplace_back(p->value.numel(), 0.0F);
    v_.emplace_back(p->value.numel(), 0.0F);
  }
}

void AdamW::step(double lr, float grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(config_.eps);
  const auto decay = static_cast<float>(1.0 - lr * config_.weight_decay);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    float* w = p.value.data();
    const float* g = p.grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const bool apply_decay = p.decay && config_.weight_decay != 0.0;
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      const float gk = g[k] * grad_scale;
      m[k] = b1 * m[k] + (1.0F - b1) * gk;
      v[k] = b2 * v[k] + (1.0F - b2) * gk * gk;
      if (apply_decay) w[k] *= decay;
      w[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
  }
}

}  // namespace ddb::nn
