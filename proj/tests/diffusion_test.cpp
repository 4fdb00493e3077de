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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>

#include "ddb/corpus.hpp"
#include "ddb/diffusion.hpp"
#include "ddb/errors.hpp"
#include "ddb/nn/models.hpp"

using namespace ddb;
using namespace ddb::diffusion;

namespace {

// Returns a fixed value for the conditional and another for the null
// condition, independent of the input.
class ConstantPredictor : public nn::NoisePredictor {
 public:
  ConstantPredictor(float cond, float uncond, int classes = 2) : cond_(cond), uncond_(uncond), classes_(classes) {}
  Tensor predict(const Tensor& x, std::span<const int>, std::span<const int> c) override {
    Tensor out(x.shape());
    const std::size_t per = x.numel() / static_cast<std::size_t>(x.dim(0));
    for (int i = 0; i < x.dim(0); ++i) {
      for (std::size_t k = 0; k < per; ++k) out[i * per + k] = c[i] == classes_ ? uncond_ : cond_;
    }
    ++calls;
    return out;
  }
  int null_condition() const override { return classes_; }
  int calls = 0;

 private:
  float cond_, uncond_;
  int classes_;
};

// Predicts exactly a tensor handed to it beforehand.
class OraclePredictor : public nn::NoisePredictor {
 public:
  Tensor answer;
  std::vector<int> seen_conditions;
  Tensor predict(const Tensor&, std::span<const int>, std::span<const int> c) override {
    seen_conditions.assign(c.begin(), c.end());
    return answer;
  }
  int null_condition() const override { return 2; }
};

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

Tensor scalar(float v) { return Tensor({1, 1, 1, 1}, std::vector<float>{v}); }

NoiseSchedule schedule_with(std::vector<double> betas) { return NoiseSchedule(std::move(betas)); }

}  // namespace

TEST(Schedule, LinearEndpointsAreExact) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.028);
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_EQ(s.beta(1), 1e-4);
  EXPECT_EQ(s.beta(1000), 0.028);
  for (int t = 1; t <= 1000; ++t) EXPECT_EQ(s.sigma(t), std::sqrt(s.beta(t))) << t;
}

TEST(Schedule, SingleStep) {
  const auto s = build_linear_schedule(1, 0.02, 0.5);
  EXPECT_EQ(s.beta(1), 0.02);
  EXPECT_EQ(s.alpha_bar(1), 1.0 - 0.02);
}

TEST(Schedule, AlphaBarAtTMatchesBruteForceProduct) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.028);
  double p = 1.0;
  for (int t = 1; t <= 1000; ++t) p *= 1.0 - (1e-4 + (t - 1) / 999.0 * (0.028 - 1e-4));
  EXPECT_LT(rel(s.alpha_bar(1000), p), 1e-12);
  // Regression value recorded from the product above.
  EXPECT_LT(rel(s.alpha_bar(1000), 6.924227726214995e-07), 1e-9);
}

TEST(Schedule, AlphaBarDecreasesByTheRecurrence) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.028);
  for (int t = 2; t <= 1000; ++t) {
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.alpha_bar(t), 0.0);
    EXPECT_LT(rel(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t)), 1e-15);
    EXPECT_GE(s.beta(t), s.beta(t - 1));
  }
}

TEST(Schedule, RejectsBadParameters) {
  EXPECT_THROW(build_linear_schedule(0, 1e-4, 0.02), ConfigError);
  EXPECT_THROW(build_linear_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(build_linear_schedule(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(build_linear_schedule(10, 1e-4, 1.0), ConfigError);
  const auto s = build_linear_schedule(10, 1e-4, 0.02);
  EXPECT_THROW(s.beta(0), UsageError);
  EXPECT_THROW(s.alpha_bar(11), UsageError);
}

TEST(ForwardDiffuse, ClosedFormExamples) {
  const auto s = schedule_with({0.75});  // alpha_bar_1 = 0.25
  const Tensor x = forward_diffuse(scalar(1.0F), 1, scalar(2.0F), s);
  EXPECT_LT(rel(x[0], 0.5 + std::sqrt(0.75) * 2.0), 1e-6);
  EXPECT_NEAR(x[0], 2.2321, 5e-5);

  const auto lin = build_linear_schedule(1000, 1e-4, 0.028);
  const Tensor x0({2, 1, 2, 2}, std::vector<float>{0.3F, -0.7F, 1.0F, 0.0F, 0.5F, 0.25F, -1.0F, 0.9F});
  const Tensor zero = Tensor::zeros_like(x0);
  const Tensor no_noise = forward_diffuse(x0, 400, zero, lin);
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    EXPECT_FLOAT_EQ(no_noise[i], static_cast<float>(std::sqrt(lin.alpha_bar(400)) * x0[i]));
  }
  const Tensor no_signal = forward_diffuse(zero, 400, x0, lin);
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    EXPECT_FLOAT_EQ(no_signal[i], static_cast<float>(std::sqrt(1.0 - lin.alpha_bar(400)) * x0[i]));
  }
  EXPECT_THROW(forward_diffuse(x0, 0, zero, lin), UsageError);
  EXPECT_THROW(forward_diffuse(x0, 1001, zero, lin), UsageError);
}

TEST(ForwardDiffuse, EmpiricalMomentsMatchWithinThreeStandardErrors) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.028);
  const int n = 10000, t = 250;
  const float x0v = 0.8F;
  Rng rng(42);
  Tensor eps({n, 1, 1, 1});
  for (float& v : eps.values()) v = rng.normal();
  const Tensor x0({n, 1, 1, 1}, x0v);
  const Tensor xt = forward_diffuse(x0, t, eps, s);
  double sum = 0, sq = 0;
  for (float v : xt.values()) sum += v;
  const double mean = sum / n;
  for (float v : xt.values()) sq += (v - mean) * (v - mean);
  const double var = sq / (n - 1);
  const double want_mean = std::sqrt(s.alpha_bar(t)) * x0v;
  const double want_var = 1.0 - s.alpha_bar(t);
  EXPECT_LT(std::abs(mean - want_mean), 3.0 * std::sqrt(want_var / n));
  // Var of the sample variance for a Gaussian: 2 sigma^4 / (n - 1).
  EXPECT_LT(std::abs(var - want_var), 3.0 * std::sqrt(2.0 * want_var * want_var / (n - 1)));
}

TEST(TrainStep, PerfectPredictorHasZeroLoss) {
  const auto s = build_linear_schedule(100, 1e-3, 0.2);
  Rng rng(5);
  Tensor x0({8, 3, 4, 4});
  for (float& v : x0.values()) v = rng.uniform(-1.0, 1.0);
  const std::vector<int> y{0, 1, 0, 1, 0, 1, 1, 0};
  const TrainingDraw draw = draw_training_noise(x0, y, s, 0.1, 2, rng);
  OraclePredictor oracle;
  oracle.answer = draw.eps;
  EXPECT_EQ(train_step(oracle, x0, draw, s), 0.0);
}

TEST(TrainStep, ZeroPredictorLossIsThePixelCount) {
  const auto s = build_linear_schedule(100, 1e-3, 0.2);
  Rng rng(8);
  const int n = 64, pixels = 3 * 4 * 4;
  const Tensor x0({n, 3, 4, 4}, 0.1F);
  const std::vector<int> y(n, 1);
  const TrainingDraw draw = draw_training_noise(x0, y, s, 0.1, 2, rng);
  ConstantPredictor zero(0.0F, 0.0F);
  const double loss = train_step(zero, x0, draw, s);
  // ||eps||^2 ~ chi-square(pixels): mean pixels, variance 2*pixels.
  EXPECT_LT(std::abs(loss - pixels), 3.0 * std::sqrt(2.0 * pixels / n));
}

TEST(TrainStep, ConditionDroppedAtTheConfiguredRate) {
  const auto s = build_linear_schedule(10, 1e-3, 0.2);
  Rng rng(11);
  const int n = 10000;
  const Tensor x0({n, 1, 1, 1}, 0.0F);
  const std::vector<int> y(n, 0);
  const TrainingDraw draw = draw_training_noise(x0, y, s, 0.1, 2, rng);
  const auto nulls = std::count(draw.conditions.begin(), draw.conditions.end(), 2);
  EXPECT_NEAR(static_cast<double>(nulls), 1000.0, 100.0);
  for (int t : draw.timesteps) ASSERT_TRUE(t >= 1 && t <= 10);
}

TEST(TrainStep, NonFiniteLossNamesTheIteration) {
  const auto s = build_linear_schedule(10, 1e-3, 0.2);
  Rng rng(1);
  const Tensor x0({2, 1, 1, 1}, 0.0F);
  ConstantPredictor bad(std::numeric_limits<float>::quiet_NaN(), 0.0F);
  try {
    train_step(bad, x0, std::vector<int>{0, 1}, s, 0.0, rng, 17);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
  EXPECT_THROW(train_step(bad, x0, std::vector<int>{0, 2}, s, 0.0, rng), UsageError);
}

TEST(Guidance, HandComputedCombination) {
  const Tensor g = guided_combination(scalar(0.5F), scalar(0.2F), 2.0);
  EXPECT_LT(rel(g[0], 1.1), 1e-6);
  ConstantPredictor m(0.5F, 0.2F);
  const std::vector<int> t{5}, y{1};
  EXPECT_LT(rel(cfg_noise(m, scalar(0.0F), t, y, 2.0)[0], 1.1), 1e-6);
}

TEST(Guidance, ZeroWeightIsTheConditionalPredictionBitwise) {
  auto unet = nn::UNetDenoiser(nn::DenoiserShape{}, 3);
  Rng rng(2);
  Tensor x({3, 3, 16, 16});
  for (float& v : x.values()) v = rng.normal();
  const std::vector<int> t{10, 500, 999}, y{0, 1, 1};
  const Tensor cond = unet.predict(x, t, y);
  const Tensor guided = cfg_noise(unet, x, t, y, 0.0);
  ASSERT_EQ(guided.numel(), cond.numel());
  EXPECT_EQ(0, std::memcmp(guided.data(), cond.data(), cond.numel() * sizeof(float)));
}

TEST(Guidance, EqualPredictionsAreInvariantToW) {
  ConstantPredictor m(0.37F, 0.37F);
  const std::vector<int> t{1, 2}, y{0, 1};
  const Tensor x({2, 1, 2, 2}, 0.0F);
  for (double w : {-1.5, 0.0, 0.5, 1.0, 3.0, 7.0}) {
    const Tensor g = cfg_noise(m, x, t, y, w);
    for (float v : g.values()) EXPECT_FLOAT_EQ(v, 0.37F) << w;
  }
}

TEST(Guidance, AffineInW) {
  auto unet = nn::UNetDenoiser(nn::DenoiserShape{}, 4);
  Rng rng(3);
  Tensor x({2, 3, 16, 16});
  for (float& v : x.values()) v = rng.normal();
  const std::vector<int> t{30, 700}, y{1, 0};
  const Tensor g0 = cfg_noise(unet, x, t, y, 0.0);
  const Tensor g1 = cfg_noise(unet, x, t, y, 1.5);
  const Tensor g2 = cfg_noise(unet, x, t, y, 2.0);
  const Tensor g12 = cfg_noise(unet, x, t, y, 3.5);
  for (std::size_t i = 0; i < g0.numel(); ++i) {
    EXPECT_NEAR(g1[i] + g2[i] - g0[i], g12[i], 1e-4 * (1.0 + std::abs(g12[i])));
  }
}

TEST(ReverseStep, HandComputedExample) {
  // alpha = 0.99, beta = 0.01, alpha_bar = 0.5 at t = 2.
  const auto s = schedule_with({1.0 - 0.5 / 0.99, 0.01});
  ASSERT_LT(rel(s.alpha_bar(2), 0.5), 1e-12);
  const Tensor out = reverse_step(scalar(1.0F), 2, scalar(0.3F), s, nullptr);
  const double want = (1.0 / std::sqrt(0.99)) * (1.0 - (0.01 / std::sqrt(0.5)) * 0.3);
  EXPECT_LT(rel(out[0], want), 1e-6);
  // 0.99077 is what multiplying by sqrt(alpha) instead of dividing gives.
  EXPECT_NEAR(out[0], 1.0007738, 1e-6);
  EXPECT_GT(std::abs(out[0] - 0.99077), 1e-3);
}

TEST(ReverseStep, VanishingBetaIsIdentity) {
  const auto s = schedule_with({0.1, 1e-14});
  Rng rng(9);
  Tensor x({1, 1, 3, 3}), e({1, 1, 3, 3}), z({1, 1, 3, 3});
  for (float& v : x.values()) v = rng.normal();
  for (float& v : e.values()) v = rng.normal();
  for (float& v : z.values()) v = rng.normal();
  const Tensor out = reverse_step(x, 2, e, s, &z);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(out[i], x[i], 1e-6);
}

TEST(ReverseStep, FinalStepInvertsTheForwardProcess) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.028);
  Rng rng(12);
  Tensor x0({4, 3, 2, 2}), eps({4, 3, 2, 2});
  for (float& v : x0.values()) v = rng.uniform(-1.0, 1.0);
  for (float& v : eps.values()) v = rng.normal();
  const Tensor x1 = forward_diffuse(x0, 1, eps, s);
  const Tensor back = reverse_step(x1, 1, eps, s, nullptr);
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    const double closed = (x1[i] - std::sqrt(1.0 - s.alpha_bar(1)) * eps[i]) / std::sqrt(s.alpha_bar(1));
    EXPECT_NEAR(closed, x0[i], 1e-6);
    EXPECT_NEAR(back[i], closed, 1e-6);
  }
  EXPECT_THROW(reverse_step(x1, 0, eps, s, nullptr), UsageError);
}

TEST(Sampler, EmptyRequestAndDeterminism) {
  auto unet = nn::UNetDenoiser(nn::DenoiserShape{}, 6);
  const auto s = build_linear_schedule(8, 1e-2, 0.2);
  EXPECT_EQ(sample(unet, 0, GuidanceConfig{1.0, 0, 1}, s, 3, 16, 16).dim(0), 0);
  const Tensor a = sample(unet, 1, GuidanceConfig{1.0, 5, 77}, s, 3, 16, 16, 2);
  const Tensor a2 = sample(unet, 1, GuidanceConfig{1.0, 5, 77}, s, 3, 16, 16, 2);
  EXPECT_EQ(0, std::memcmp(a.data(), a2.data(), a.numel() * sizeof(float)));
  // Other chunk sizes only change GEMM blocking, so agreement is up to rounding.
  const Tensor b = sample(unet, 1, GuidanceConfig{1.0, 5, 77}, s, 3, 16, 16, 4);
  ASSERT_EQ(a.numel(), b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], 1e-4);
  const Tensor c = sample(unet, 1, GuidanceConfig{1.0, 5, 78}, s, 3, 16, 16);
  EXPECT_NE(0, std::memcmp(a.data(), c.data(), a.numel() * sizeof(float)));
  for (float v : a.values()) ASSERT_TRUE(v >= -1.0F && v <= 1.0F);
  EXPECT_THROW(sample(unet, 2, GuidanceConfig{1.0, 1, 1}, s, 3, 16, 16), UsageError);
}

TEST(Sampler, DivergenceIsReportedWithTheStep) {
  ConstantPredictor inf(std::numeric_limits<float>::infinity(), 0.0F);
  const auto s = build_linear_schedule(5, 1e-2, 0.2);
  try {
    sample(inf, 0, GuidanceConfig{0.0, 1, 1}, s, 1, 2, 2);
    FAIL();
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 5"), std::string::npos) << e.what();
  }
}

TEST(CDPM, TrainingReducesLossAndCheckpointRoundTrips) {
  corpus::BiasedDatasetSpec spec;
  spec.samples_per_class = 40;
  spec.val_per_group = 0;
  spec.test_per_group = 0;
  const auto data = corpus::generate_biased_dataset(spec);
  CDPMConfig cfg;
  cfg.T = 50;
  cfg.beta_1 = 2e-3;
  cfg.beta_T = 0.4;
  cfg.train_iterations = 150;
  cfg.batch_size = 16;
  cfg.lr = 2e-3;
  nn::UNetDenoiser unet(denoiser_shape(data, cfg), 1);
  const auto r = train_cdpm(unet, data, cfg, 9);
  const double first = std::accumulate(r.loss_curve.begin(), r.loss_curve.begin() + 20, 0.0) / 20;
  EXPECT_LT(r.final_loss, 0.6 * first);

  const auto path = std::filesystem::temp_directory_path() / "ddb_cdpm_test.ckpt";
  save_cdpm(path, unet, cfg, {{"note", "x"}});
  auto loaded = load_cdpm(path);
  EXPECT_EQ(loaded.config.to_json(), cfg.to_json());
  EXPECT_EQ(loaded.meta.at("note"), "x");
  const auto sched = build_linear_schedule(cfg.T, cfg.beta_1, cfg.beta_T);
  const Tensor a = sample(unet, 0, GuidanceConfig{1.0, 2, 3}, sched, 3, 16, 16);
  const Tensor b = sample(*loaded.model, 0, GuidanceConfig{1.0, 2, 3}, sched, 3, 16, 16);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)));

  const auto synth = generate_synthetic_dataset(unet, sched, GuidanceConfig{1.0, 3, 4}, data);
  ASSERT_EQ(synth.samples.size(), 6u);
  for (const auto& s : synth.samples) {
    EXPECT_TRUE(s.synthetic);
    EXPECT_EQ(s.b, corpus::kUnknownBias);
  }
}
