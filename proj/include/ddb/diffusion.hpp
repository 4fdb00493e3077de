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
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ddb/corpus.hpp"
#include "ddb/nn/models.hpp"
#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"
#include "json.hpp"

namespace ddb::diffusion {

// Arrays are indexed by timestep t in [1, T]; element 0 is unused padding so
// that beta(t) reads like the math.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(check(t)); }
  double alpha(int t) const { return alpha_.at(check(t)); }
  double alpha_bar(int t) const { return alpha_bar_.at(check(t)); }
  double sigma(int t) const { return sigma_.at(check(t)); }

 private:
  int check(int t) const;
  std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

// beta_t = beta_1 + (t-1)/(T-1) * (beta_T - beta_1).
NoiseSchedule build_linear_schedule(int T, double beta_1, double beta_T);

struct CDPMConfig {
  int T = 1000;
  double beta_1 = 1e-4;
  double beta_T = 0.028;
  double p_uncond = 0.1;
  long train_iterations = 3000;
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  int base_channels = 16;
  int embed_dim = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static CDPMConfig from_json(const nlohmann::json& j);
};

nn::DenoiserShape denoiser_shape(const corpus::Dataset& dataset, const CDPMConfig& config);

struct GuidanceConfig {
  double w = 1.0;
  int samples_per_class = 1000;
  std::uint64_t seed = 0;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one t for the whole tensor.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);
// Per-sample timesteps along the leading axis.
Tensor forward_diffuse(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule);

// Randomness consumed by one training step, drawn up front so the objective
// can be evaluated against known noise.
struct TrainingDraw {
  std::vector<int> timesteps;
  Tensor eps;
  std::vector<int> conditions;  // labels with dropped entries set to the null condition
};

TrainingDraw draw_training_noise(const Tensor& x0, std::span<const int> labels, const NoiseSchedule& schedule,
                                 double p_uncond, int null_condition, Rng& rng);

// Mean over the batch of the per-sample squared error ||eps - eps_theta||^2.
// Back-propagates into the model (gradients accumulate; the caller steps the
// optimizer). Throws TrainingError on a non-finite loss.
double train_step(nn::NoisePredictor& model, const Tensor& x0, const TrainingDraw& draw,
                  const NoiseSchedule& schedule, long iteration = -1);
double train_step(nn::NoisePredictor& model, const Tensor& x0, std::span<const int> labels,
                  const NoiseSchedule& schedule, double p_uncond, Rng& rng, long iteration = -1);

// (1 + w) * eps_cond - w * eps_uncond
Tensor guided_combination(const Tensor& eps_cond, const Tensor& eps_uncond, double w);
Tensor cfg_noise(nn::NoisePredictor& model, const Tensor& x_t, std::span<const int> t, std::span<const int> y,
                 double w);

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z.
// A null z means z = 0.
Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule,
                    const Tensor* z);

// Ancestral sampling with classifier-free guidance. Returns
// guidance.samples_per_class images of class y in model space, clamped to
// [-1, 1], as an NCHW tensor. Each image draws its noise from a stream keyed
// by (seed, y, index).
Tensor sample(nn::NoisePredictor& model, int y, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
              int channels, int height, int width, int chunk_size = 128);

// Pixels in [0,1] <-> model space [-1,1].
Tensor to_model_space(const Tensor& images01);
std::vector<float> to_unit_range(std::span<const float> model_space);

struct CDPMTrainingResult {
  long iterations = 0;
  double final_loss = 0.0;  // mean over the last 100 iterations
  std::vector<double> loss_curve;
};

using ProgressFn = std::function<void(long iteration, double loss)>;

// Trains on the train split of `dataset` (pixels in [0,1]).
CDPMTrainingResult train_cdpm(nn::UNetDenoiser& model, const corpus::Dataset& dataset, const CDPMConfig& config,
                              std::uint64_t seed, const ProgressFn& progress = {});

// Builds the synthetic set: samples_per_class images for every class,
// flagged synthetic, pixels mapped back to [0,1].
corpus::Dataset generate_synthetic_dataset(nn::UNetDenoiser& model, const NoiseSchedule& schedule,
                                           const GuidanceConfig& guidance, const corpus::Dataset& like);

void save_cdpm(const std::filesystem::path& path, nn::UNetDenoiser& model, const CDPMConfig& config,
               const nlohmann::json& extra_meta);
struct LoadedCDPM {
  std::unique_ptr<nn::UNetDenoiser> model;
  CDPMConfig config;
  nlohmann::json meta;
};
LoadedCDPM load_cdpm(const std::filesystem::path& path);

}  // namespace ddb::diffusion
