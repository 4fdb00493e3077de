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
#include <filesystem>
#include <fstream>
#include <functional>

#include "ddb/container.hpp"
#include "ddb/errors.hpp"
#include "ddb/nn/models.hpp"
#include "ddb/nn/optim.hpp"

namespace ddb::nn {
namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0F) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = scale * rng.normal();
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Central differences on a handful of coordinates of `target`, comparing
// against `analytic` (same layout). Two step sizes are tried because ReLU
// kinks can sit inside the coarser stencil.
void expect_grad_matches(Tensor& target, const Tensor& analytic, const std::function<double()>& loss, Rng& rng,
                         int probes = 12) {
  auto central = [&](std::size_t i, float step) {
    const float saved = target[i];
    target[i] = saved + step;
    const double up = loss();
    target[i] = saved - step;
    const double down = loss();
    target[i] = saved;
    return (up - down) / (2.0 * step);
  };
  for (int k = 0; k < probes; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(target.numel()) - 1));
    double numeric = central(i, 1e-3F);
    if (std::abs(analytic[i] - numeric) > 2e-2 * std::max(1.0, std::abs(numeric))) numeric = central(i, 2.5e-4F);
    EXPECT_NEAR(analytic[i], numeric, 2e-2 * std::max(1.0, std::abs(numeric))) << "coordinate " << i;
  }
}

TEST(Layers, StridedConvInputGradient) {
  Rng rng(1);
  Conv2d conv("c", 3, 5, 3, 2, 1, rng);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor r = random_tensor({2, 5, 4, 4}, rng);
  auto loss = [&] { return dot(conv.forward(x), r); };
  loss();
  const Tensor gx = conv.backward(r);
  expect_grad_matches(x, gx, loss, rng);
}

TEST(Layers, GroupNormInputGradient) {
  Rng rng(2);
  GroupNorm norm("n", 2, 4);
  Tensor x = random_tensor({3, 4, 4, 4}, rng);
  const Tensor r = random_tensor({3, 4, 4, 4}, rng);
  auto loss = [&] { return dot(norm.forward(x), r); };
  loss();
  const Tensor gx = norm.backward(r);
  expect_grad_matches(x, gx, loss, rng);
}

TEST(Layers, AvgPoolAndUpsampleAreAdjoint) {
  Rng rng(3);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor y = random_tensor({1, 2, 8, 8}, rng);
  // <up(x), y> == <x, up^T(y)>
  EXPECT_NEAR(dot(upsample2(x), y), dot(x, upsample2_backward(y)), 1e-4);
  const Tensor z = random_tensor({1, 2, 2, 2}, rng);
  EXPECT_NEAR(dot(avg_pool2(x), z), dot(x, avg_pool2_backward(z)), 1e-4);
}

TEST(Denoiser, ParameterGradientsMatchFiniteDifferences) {
  DenoiserShape shape;
  shape.channels = 3;
  shape.height = 8;
  shape.width = 8;
  shape.base_channels = 8;
  shape.embed_dim = 16;
  UNetDenoiser model(shape, 11);
  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const std::vector<int> t{5, 400};
  const std::vector<int> y{0, model.null_condition()};
  const Tensor r = random_tensor({2, 3, 8, 8}, rng);
  auto loss = [&] { return dot(model.predict(x, t, y), r); };

  ParamList params = model.params();
  zero_grad(params);
  loss();
  model.backward(r);
  for (Param* p : params) {
    if (p->name == "class_embed.table" || p->name == "block1.conv1.weight" || p->name == "up1.skip.weight" ||
        p->name == "time.fc1.weight" || p->name == "down2.weight" || p->name == "mid.norm2.gamma") {
      SCOPED_TRACE(p->name);
      const Tensor analytic = p->grad;
      expect_grad_matches(p->value, analytic, loss, rng, 6);
    }
  }
}

TEST(Denoiser, OutputShapeEqualsInputShapeAndNullConditionWorksForAllSteps) {
  DenoiserShape shape;
  shape.height = 8;
  shape.width = 8;
  shape.base_channels = 8;
  shape.embed_dim = 16;
  UNetDenoiser model(shape, 3);
  Rng rng(5);
  const Tensor x = random_tensor({3, 3, 8, 8}, rng);
  for (int t : {1, 500, 1000}) {
    const std::vector<int> ts(3, t);
    const std::vector<int> ys(3, model.null_condition());
    const Tensor out = model.predict(x, ts, ys);
    EXPECT_EQ(out.shape(), x.shape());
    EXPECT_TRUE(out.all_finite());
  }
  const std::vector<int> ts(3, 1);
  const std::vector<int> bad(3, model.null_condition() + 1);
  EXPECT_THROW(model.predict(x, ts, bad), UsageError);
}

TEST(Classifier, ParameterGradientsMatchFiniteDifferences) {
  ClassifierShape shape;
  shape.height = 8;
  shape.width = 8;
  shape.widths = {8, 8, 8};
  shape.num_classes = 3;
  ConvClassifier model(shape, 9);
  Rng rng(6);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  const Tensor r = random_tensor({4, 3}, rng);
  auto loss = [&] { return dot(model.forward(x), r); };
  ParamList params = model.params();
  zero_grad(params);
  loss();
  model.backward(r);
  for (Param* p : params) {
    SCOPED_TRACE(p->name);
    const Tensor analytic = p->grad;
    expect_grad_matches(p->value, analytic, loss, rng, 4);
  }
}

TEST(Classifier, FrozenModelRefusesBackward) {
  ClassifierShape shape;
  ConvClassifier model(shape, 1);
  Rng rng(7);
  const Tensor logits = model.forward(random_tensor({1, 3, 16, 16}, rng));
  model.freeze();
  EXPECT_THROW(model.backward(logits), ContractViolation);
}

TEST(Optim, CosineScheduleWarmsUpThenDecays) {
  CosineSchedule s{1e-3, 100, 0.1, 0.0};
  EXPECT_NEAR(s.lr_at(0), 1e-4, 1e-12);
  EXPECT_NEAR(s.lr_at(9), 1e-3, 1e-12);
  EXPECT_NEAR(s.lr_at(10), 1e-3, 1e-12);
  EXPECT_LT(s.lr_at(60), s.lr_at(30));
  EXPECT_NEAR(s.lr_at(100), 0.0, 1e-12);
}

TEST(Optim, AdamWMinimisesQuadratic) {
  Param p{"w", Tensor({2}, std::vector<float>{3.0F, -2.0F}), Tensor({2}), false};
  AdamW opt({&p}, AdamWConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    for (int k = 0; k < 2; ++k) p.grad[k] = 2.0F * p.value[k];
    opt.step(0.05);
  }
  EXPECT_NEAR(p.value[0], 0.0F, 1e-2);
  EXPECT_NEAR(p.value[1], 0.0F, 1e-2);
}

TEST(Container, RoundTripPreservesMetaAndTensors) {
  const auto path = std::filesystem::temp_directory_path() / "ddb_container_test.bin";
  ClassifierShape shape;
  ConvClassifier a(shape, 1), b(shape, 2);
  write_container(path, {{"kind", "classifier"}, {"iteration", 7}}, a.state());
  const Container c = read_container(path);
  EXPECT_EQ(c.meta.at("iteration"), 7);
  b.load_state(c.tensors);
  const auto sa = a.state();
  const auto sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].tensor.storage(), sb[i].tensor.storage());
  EXPECT_EQ(read_container_meta(path).at("kind"), "classifier");
  std::filesystem::remove(path);
}

TEST(Container, RejectsForeignFile) {
  const auto path = std::filesystem::temp_directory_path() / "ddb_not_a_container.bin";
  {
    std::ofstream out(path);
    out << "hello world, not a container";
  }
  EXPECT_THROW(read_container(path), ArtifactError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ddb::nn
