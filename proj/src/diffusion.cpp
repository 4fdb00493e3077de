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

#include "ddb/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ddb/container.hpp"
#include "ddb/errors.hpp"
#include "ddb/nn/optim.hpp"

namespace ddb::diffusion {

using nlohmann::json;

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("noise schedule needs at least one step");
  const std::size_t T = betas.size();
  beta_.assign(T + 1, 0.0);
  alpha_.assign(T + 1, 1.0);
  alpha_bar_.assign(T + 1, 1.0);
  sigma_.assign(T + 1, 0.0);
  double running = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule: beta must lie in (0,1)");
    beta_[t] = b;
    alpha_[t] = 1.0 - b;
    running *= alpha_[t];
    alpha_bar_[t] = running;
    sigma_[t] = std::sqrt(b);
  }
}

int NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps()) {
    throw UsageError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return t;
}

NoiseSchedule build_linear_schedule(int T, double beta_1, double beta_T) {
  if (T < 1) throw ConfigError("schedule: T must be at least 1");
  if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0)) {
    throw ConfigError("schedule: require 0 < beta_1 <= beta_T < 1");
  }
  std::vector<double> betas(T);
  for (int t = 1; t <= T; ++t) {
    betas[t - 1] = T == 1 ? beta_1 : beta_1 + static_cast<double>(t - 1) / (T - 1) * (beta_T - beta_1);
  }
  return NoiseSchedule(std::move(betas));
}

// ---------------------------------------------------------------------------

void CDPMConfig::validate() const {
  if (T < 1) throw ConfigError("diffusion: T must be at least 1");
  if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw ConfigError("diffusion: p_uncond must lie in [0,1)");
  if (train_iterations < 0) throw ConfigError("diffusion: train_iterations must be non-negative");
  if (batch_size < 1) throw ConfigError("diffusion: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("diffusion: lr must be positive");
  if (base_channels < 4 || base_channels % 4 != 0) throw ConfigError("diffusion: base_channels must be a multiple of 4");
  if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("diffusion: embed_dim must be even");
  build_linear_schedule(T, beta_1, beta_T);
}

json CDPMConfig::to_json() const {
  return {{"T", T},
          {"beta_1", beta_1},
          {"beta_T", beta_T},
          {"p_uncond", p_uncond},
          {"train_iterations", train_iterations},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"base_channels", base_channels},
          {"embed_dim", embed_dim}};
}

CDPMConfig CDPMConfig::from_json(const json& j) {
  CDPMConfig c;
  c.T = j.value("T", c.T);
  c.beta_1 = j.value("beta_1", c.beta_1);
  c.beta_T = j.value("beta_T", c.beta_T);
  c.p_uncond = j.value("p_uncond", c.p_uncond);
  c.train_iterations = j.value("train_iterations", c.train_iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  return c;
}

// ---------------------------------------------------------------------------

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (!x0.same_shape(eps)) throw UsageError("forward_diffuse: eps shape differs from x0");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i) out[i] = static_cast<float>(a * x0[i] + s * eps[i]);
  return out;
}

Tensor forward_diffuse(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (!x0.same_shape(eps)) throw UsageError("forward_diffuse: eps shape differs from x0");
  if (x0.rank() == 0 || static_cast<std::size_t>(x0.dim(0)) != t.size()) {
    throw UsageError("forward_diffuse: one timestep per sample required");
  }
  const std::size_t per = x0.stride0();
  Tensor out(x0.shape());
  for (std::size_t n = 0; n < t.size(); ++n) {
    const double ab = schedule.alpha_bar(t[n]);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t k = n * per; k < (n + 1) * per; ++k) out[k] = static_cast<float>(a * x0[k] + s * eps[k]);
  }
  return out;
}

TrainingDraw draw_training_noise(const Tensor& x0, std::span<const int> labels, const NoiseSchedule& schedule,
                                 double p_uncond, int null_condition, Rng& rng) {
  if (x0.rank() == 0 || x0.dim(0) == 0) throw UsageError("train_step: empty batch");
  if (static_cast<std::size_t>(x0.dim(0)) != labels.size()) throw UsageError("train_step: label count mismatch");
  TrainingDraw d;
  d.timesteps.resize(labels.size());
  d.conditions.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= null_condition) {
      throw UsageError("train_step: label " + std::to_string(labels[i]) + " not covered by the model");
    }
    d.timesteps[i] = rng.uniform_int(1, schedule.steps());
    d.conditions[i] = rng.bernoulli(p_uncond) ? null_condition : labels[i];
  }
  d.eps = Tensor(x0.shape());
  for (float& v : d.eps.values()) v = rng.normal();
  return d;
}

double train_step(nn::NoisePredictor& model, const Tensor& x0, const TrainingDraw& draw, const NoiseSchedule& schedule,
                  long iteration) {
  const Tensor x_t = forward_diffuse(x0, draw.timesteps, draw.eps, schedule);
  const Tensor pred = model.predict(x_t, draw.timesteps, draw.conditions);
  const auto n = static_cast<double>(x0.dim(0));
  double loss = 0.0;
  Tensor grad(pred.shape());
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - draw.eps[i];
    loss += d * d;
    grad[i] = static_cast<float>(2.0 * d / n);
  }
  loss /= n;
  if (!std::isfinite(loss)) {
    throw TrainingError("diffusion training loss is not finite" +
                        (iteration >= 0 ? " at iteration " + std::to_string(iteration) : std::string()));
  }
  model.backward(grad);
  return loss;
}

double train_step(nn::NoisePredictor& model, const Tensor& x0, std::span<const int> labels,
                  const NoiseSchedule& schedule, double p_uncond, Rng& rng, long iteration) {
  const TrainingDraw draw = draw_training_noise(x0, labels, schedule, p_uncond, model.null_condition(), rng);
  return train_step(model, x0, draw, schedule, iteration);
}

// ---------------------------------------------------------------------------

Tensor guided_combination(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  if (!eps_cond.same_shape(eps_uncond)) throw UsageError("guided_combination: shape mismatch");
  if (!std::isfinite(w)) throw UsageError("guidance strength must be finite");
  Tensor out(eps_cond.shape());
  const double a = 1.0 + w;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<float>(a * eps_cond[i] - w * eps_uncond[i]);
  }
  return out;
}

Tensor cfg_noise(nn::NoisePredictor& model, const Tensor& x_t, std::span<const int> t, std::span<const int> y,
                 double w) {
  if (!std::isfinite(w)) throw UsageError("guidance strength must be finite");
  for (int c : y) {
    if (c < 0 || c >= model.null_condition()) throw UsageError("cfg_noise: invalid class " + std::to_string(c));
  }
  if (w == 0.0) return model.predict(x_t, t, y);

  // Conditional and unconditional halves share one forward pass.
  const int n = x_t.dim(0);
  std::vector<int> shape = x_t.shape();
  shape[0] = 2 * n;
  Tensor both(shape);
  std::copy(x_t.values().begin(), x_t.values().end(), both.data());
  std::copy(x_t.values().begin(), x_t.values().end(), both.data() + x_t.numel());
  std::vector<int> ts(t.begin(), t.end());
  ts.insert(ts.end(), t.begin(), t.end());
  std::vector<int> cs(y.begin(), y.end());
  cs.insert(cs.end(), static_cast<std::size_t>(n), model.null_condition());
  const Tensor pred = model.predict(both, ts, cs);

  Tensor out(x_t.shape());
  const double a = 1.0 + w;
  const std::size_t half = x_t.numel();
  for (std::size_t i = 0; i < half; ++i) out[i] = static_cast<float>(a * pred[i] - w * pred[half + i]);
  return out;
}

Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule, const Tensor* z) {
  if (!x_t.same_shape(eps_hat)) throw UsageError("reverse_step: eps_hat shape differs from x_t");
  if (z != nullptr && !z->same_shape(x_t)) throw UsageError("reverse_step: z shape differs from x_t");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double sigma = schedule.sigma(t);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
    if (z != nullptr) v += sigma * (*z)[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor sample(nn::NoisePredictor& model, int y, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
              int channels, int height, int width, int chunk_size) {
  if (y < 0 || y >= model.null_condition()) throw UsageError("sample: invalid class " + std::to_string(y));
  if (guidance.samples_per_class < 0) throw ConfigError("sample: samples_per_class must be non-negative");
  const int total = guidance.samples_per_class;
  Tensor out({total, channels, height, width});
  if (total == 0) return out;
  const std::size_t per = static_cast<std::size_t>(channels) * height * width;

  for (int start = 0; start < total; start += chunk_size) {
    const int n = std::min(chunk_size, total - start);
    std::vector<Rng> streams;
    streams.reserve(n);
    for (int i = 0; i < n; ++i) {
      streams.emplace_back(derive_seed(guidance.seed, {static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(start + i)}));
    }
    Tensor x({n, channels, height, width});
    for (int i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < per; ++k) x[i * per + k] = streams[i].normal();
    }
    const std::vector<int> labels(n, y);
    std::vector<int> ts(n);
    Tensor z({n, channels, height, width});
    for (int t = schedule.steps(); t >= 1; --t) {
      std::fill(ts.begin(), ts.end(), t);
      const Tensor eps_hat = cfg_noise(model, x, ts, labels, guidance.w);
      if (t > 1) {
        for (int i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < per; ++k) z[i * per + k] = streams[i].normal();
        }
        x = reverse_step(x, t, eps_hat, schedule, &z);
      } else {
        x = reverse_step(x, t, eps_hat, schedule, nullptr);
      }
      if (!x.all_finite()) throw SamplingError("non-finite sampler state at step " + std::to_string(t));
    }
    for (std::size_t k = 0; k < x.numel(); ++k) {
      out[static_cast<std::size_t>(start) * per + k] = std::clamp(x[k], -1.0F, 1.0F);
    }
  }
  return out;
}

Tensor to_model_space(const Tensor& images01) {
  Tensor out(images01.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 2.0F * images01[i] - 1.0F;
  return out;
}

std::vector<float> to_unit_range(std::span<const float> model_space) {
  std::vector<float> out(model_space.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(0.5F * (model_space[i] + 1.0F), 0.0F, 1.0F);
  return out;
}

// ---------------------------------------------------------------------------

nn::DenoiserShape denoiser_shape(const corpus::Dataset& dataset, const CDPMConfig& config) {
  nn::DenoiserShape s;
  s.channels = dataset.channels;
  s.height = dataset.height;
  s.width = dataset.width;
  s.num_classes = dataset.num_classes;
  s.base_channels = config.base_channels;
  s.embed_dim = config.embed_dim;
  return s;
}

CDPMTrainingResult train_cdpm(nn::UNetDenoiser& model, const corpus::Dataset& dataset, const CDPMConfig& config,
                              std::uint64_t seed, const ProgressFn& progress) {
  config.validate();
  const NoiseSchedule schedule = build_linear_schedule(config.T, config.beta_1, config.beta_T);
  const auto train = dataset.indices(corpus::Split::kTrain);
  if (train.empty()) throw ConfigError("diffusion: dataset has no training samples");

  nn::AdamW opt(model.params(), nn::AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const nn::CosineSchedule lr{config.lr, std::max(1L, config.train_iterations), config.warmup_fraction, 0.0};
  Rng rng(derive_seed(seed, {0xCD93ULL}));

  CDPMTrainingResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(config.train_iterations));
  std::vector<std::size_t> idx(static_cast<std::size_t>(config.batch_size));
  std::vector<int> labels(idx.size());
  for (long it = 0; it < config.train_iterations; ++it) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = train[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(train.size()) - 1))];
      labels[i] = dataset.samples[idx[i]].y;
    }
    const Tensor x0 = to_model_space(dataset.batch(idx));
    opt.zero_grad();
    const double loss = train_step(model, x0, labels, schedule, config.p_uncond, rng, it);
    opt.step(lr.lr_at(it));
    result.loss_curve.push_back(loss);
    if (progress && ((it + 1) % 100 == 0 || it + 1 == config.train_iterations)) progress(it + 1, loss);
  }
  result.iterations = config.train_iterations;
  const std::size_t tail = std::min<std::size_t>(100, result.loss_curve.size());
  if (tail > 0) {
    result.final_loss =
        std::accumulate(result.loss_curve.end() - static_cast<std::ptrdiff_t>(tail), result.loss_curve.end(), 0.0) /
        static_cast<double>(tail);
  }
  return result;
}

corpus::Dataset generate_synthetic_dataset(nn::UNetDenoiser& model, const NoiseSchedule& schedule,
                                           const GuidanceConfig& guidance, const corpus::Dataset& like) {
  corpus::Dataset out = like.empty_like();
  out.normalization.reset();
  out.source = {{"kind", "synthetic"}, {"guidance_w", guidance.w}, {"seed", guidance.seed},
                {"samples_per_class", guidance.samples_per_class}};
  const std::size_t per = like.image_numel();
  for (int y = 0; y < like.num_classes; ++y) {
    const Tensor images = sample(model, y, guidance, schedule, like.channels, like.height, like.width);
    for (int i = 0; i < images.dim(0); ++i) {
      corpus::LabeledSample s;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "synth-c%d-%06d", y, i);
      s.id = buf;
      s.y = y;
      s.split = corpus::Split::kTrain;
      s.synthetic = true;
      s.image = to_unit_range(std::span<const float>(images.data() + static_cast<std::size_t>(i) * per, per));
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

void save_cdpm(const std::filesystem::path& path, nn::UNetDenoiser& model, const CDPMConfig& config,
               const json& extra_meta) {
  json meta = extra_meta;
  meta["kind"] = "cdpm";
  meta["shape"] = model.shape().to_json();
  meta["config"] = config.to_json();
  meta["schedule"] = {{"T", config.T}, {"beta_1", config.beta_1}, {"beta_T", config.beta_T}, {"type", "linear"}};
  write_container(path, meta, model.state());
}

LoadedCDPM load_cdpm(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.meta.value("kind", "") != "cdpm") throw ArtifactError(path.string() + " is not a CDPM checkpoint");
  LoadedCDPM out;
  out.config = CDPMConfig::from_json(c.meta.at("config"));
  out.model = std::make_unique<nn::UNetDenoiser>(nn::DenoiserShape::from_json(c.meta.at("shape")), 0);
  out.model->load_state(c.tensors);
  out.meta = std::move(c.meta);
  return out;
}

}  // namespace ddb::diffusion
