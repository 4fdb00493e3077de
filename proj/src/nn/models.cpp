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

#include "ddb/nn/models.hpp"

#include "ddb/errors.hpp"

namespace ddb::nn {

std::vector<NamedTensor> snapshot(const ParamList& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const Param* p : params) out.push_back({p->name, p->value});
  return out;
}

void restore(const ParamList& params, const std::vector<NamedTensor>& tensors) {
  for (Param* p : params) {
    const NamedTensor* found = nullptr;
    for (const auto& t : tensors) {
      if (t.name == p->name) {
        found = &t;
        break;
      }
    }
    if (found == nullptr) throw ArtifactError("checkpoint is missing parameter '" + p->name + "'");
    if (!found->tensor.same_shape(p->value)) {
      throw ArtifactError("checkpoint parameter '" + p->name + "' has shape " + found->tensor.shape_string() +
                          ", model expects " + p->value.shape_string());
    }
    p->value = found->tensor;
  }
}

// ---------------------------------------------------------------------------

nlohmann::json DenoiserShape::to_json() const {
  return {{"channels", channels},         {"height", height},       {"width", width},
          {"num_classes", num_classes},   {"base_channels", base_channels},
          {"embed_dim", embed_dim},       {"groups", groups}};
}

DenoiserShape DenoiserShape::from_json(const nlohmann::json& j) {
  DenoiserShape s;
  s.channels = j.at("channels");
  s.height = j.at("height");
  s.width = j.at("width");
  s.num_classes = j.at("num_classes");
  s.base_channels = j.at("base_channels");
  s.embed_dim = j.at("embed_dim");
  s.groups = j.at("groups");
  return s;
}

ResBlock::ResBlock(const std::string& name, int in_channels, int out_channels, int embed_dim, int groups, Rng& rng)
    : norm1_(name + ".norm1", groups, in_channels),
      norm2_(name + ".norm2", groups, out_channels),
      conv1_(name + ".conv1", in_channels, out_channels, 3, 1, 1, rng),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1, rng),
      emb_proj_(name + ".emb_proj", embed_dim, out_channels, rng),
      has_skip_(in_channels != out_channels) {
  if (has_skip_) skip_ = Conv2d(name + ".skip", in_channels, out_channels, 1, 1, 0, rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& emb) {
  Tensor h = conv1_.forward(act1_.forward(norm1_.forward(x)));
  add_channel_bias(h, emb_proj_.forward(emb));
  h = conv2_.forward(act2_.forward(norm2_.forward(h)));
  if (has_skip_) {
    add_inplace(h, skip_.forward(x));
  } else {
    add_inplace(h, x);
  }
  return h;
}

Tensor ResBlock::backward(const Tensor& grad_out, Tensor& grad_emb) {
  Tensor g = norm2_.backward(act2_.backward(conv2_.backward(grad_out)));
  add_inplace(grad_emb, emb_proj_.backward(channel_bias_grad(g)));
  Tensor gx = norm1_.backward(act1_.backward(conv1_.backward(g)));
  if (has_skip_) {
    add_inplace(gx, skip_.backward(grad_out));
  } else {
    add_inplace(gx, grad_out);
  }
  return gx;
}

void ResBlock::collect(ParamList& out) {
  norm1_.collect(out);
  conv1_.collect(out);
  emb_proj_.collect(out);
  norm2_.collect(out);
  conv2_.collect(out);
  if (has_skip_) skip_.collect(out);
}

UNetDenoiser::UNetDenoiser(DenoiserShape shape, std::uint64_t seed) : shape_(shape) {
  if (shape_.height % 4 != 0 || shape_.width % 4 != 0) {
    throw ConfigError("denoiser: image height and width must be multiples of 4");
  }
  if (shape_.num_classes < 1) throw ConfigError("denoiser: num_classes must be positive");
  Rng rng(seed);
  const int c = shape_.base_channels;
  const int d = shape_.embed_dim;
  const int g = shape_.groups;
  c1_ = c;
  c2_ = 2 * c;
  time_fc1_ = Linear("time.fc1", d, d, rng);
  time_fc2_ = Linear("time.fc2", d, d, rng);
  class_embed_ = Embedding("class_embed", shape_.num_classes + 1, d, rng);
  conv_in_ = Conv2d("conv_in", shape_.channels, c1_, 3, 1, 1, rng);
  block1_ = ResBlock("block1", c1_, c1_, d, g, rng);
  down1_ = Conv2d("down1", c1_, c2_, 3, 2, 1, rng);
  block2_ = ResBlock("block2", c2_, c2_, d, g, rng);
  down2_ = Conv2d("down2", c2_, c2_, 3, 2, 1, rng);
  mid_ = ResBlock("mid", c2_, c2_, d, g, rng);
  up2_ = ResBlock("up2", 2 * c2_, c2_, d, g, rng);
  up1_ = ResBlock("up1", c2_ + c1_, c1_, d, g, rng);
  norm_out_ = GroupNorm("norm_out", g, c1_);
  conv_out_ = Conv2d("conv_out", c1_, shape_.channels, 3, 1, 1, rng);
}

Tensor UNetDenoiser::predict(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> conditions) {
  if (x_t.rank() != 4 || x_t.dim(1) != shape_.channels || x_t.dim(2) != shape_.height ||
      x_t.dim(3) != shape_.width) {
    throw UsageError("denoiser: input " + x_t.shape_string() + " does not match model image shape");
  }
  const auto n = static_cast<std::size_t>(x_t.dim(0));
  if (timesteps.size() != n || conditions.size() != n) {
    throw UsageError("denoiser: timestep/condition count does not match batch size");
  }
  const std::vector<int> ts(timesteps.begin(), timesteps.end());
  const std::vector<int> cs(conditions.begin(), conditions.end());
  Tensor emb = time_fc2_.forward(time_act_.forward(time_fc1_.forward(timestep_encoding(ts, shape_.embed_dim))));
  add_inplace(emb, class_embed_.forward(cs));
  const Tensor e = emb_act_.forward(emb);

  const Tensor h0 = conv_in_.forward(x_t);
  const Tensor h1 = block1_.forward(h0, e);
  const Tensor h2 = block2_.forward(down1_.forward(h1), e);
  const Tensor h3 = mid_.forward(down2_.forward(h2), e);
  const Tensor h4 = up2_.forward(concat_channels(upsample2(h3), h2), e);
  const Tensor h5 = up1_.forward(concat_channels(upsample2(h4), h1), e);
  return conv_out_.forward(act_out_.forward(norm_out_.forward(h5)));
}

void UNetDenoiser::backward(const Tensor& grad_prediction) {
  Tensor grad_e({grad_prediction.dim(0), shape_.embed_dim});

  Tensor g5 = norm_out_.backward(act_out_.backward(conv_out_.backward(grad_prediction)));
  Tensor g_cat1 = up1_.backward(g5, grad_e);
  Tensor g_u1, g_h1;
  split_channels(g_cat1, c2_, g_u1, g_h1);
  Tensor g4 = upsample2_backward(g_u1);
  Tensor g_cat2 = up2_.backward(g4, grad_e);
  Tensor g_u2, g_h2;
  split_channels(g_cat2, c2_, g_u2, g_h2);
  Tensor g3 = upsample2_backward(g_u2);
  Tensor g_d2 = mid_.backward(g3, grad_e);
  add_inplace(g_h2, down2_.backward(g_d2));
  Tensor g_d1 = block2_.backward(g_h2, grad_e);
  add_inplace(g_h1, down1_.backward(g_d1));
  Tensor g0 = block1_.backward(g_h1, grad_e);
  conv_in_.backward(g0);

  Tensor g_emb = emb_act_.backward(grad_e);
  class_embed_.backward(g_emb);
  time_fc1_.backward(time_act_.backward(time_fc2_.backward(g_emb)));
}

ParamList UNetDenoiser::params() {
  ParamList out;
  time_fc1_.collect(out);
  time_fc2_.collect(out);
  class_embed_.collect(out);
  conv_in_.collect(out);
  block1_.collect(out);
  down1_.collect(out);
  block2_.collect(out);
  down2_.collect(out);
  mid_.collect(out);
  up2_.collect(out);
  up1_.collect(out);
  norm_out_.collect(out);
  conv_out_.collect(out);
  return out;
}

std::vector<NamedTensor> UNetDenoiser::state() { return snapshot(params()); }
void UNetDenoiser::load_state(const std::vector<NamedTensor>& tensors) { restore(params(), tensors); }

// ---------------------------------------------------------------------------

nlohmann::json ClassifierShape::to_json() const {
  return {{"channels", channels}, {"height", height}, {"width", width},
          {"num_classes", num_classes}, {"widths", widths}, {"groups", groups}};
}

ClassifierShape ClassifierShape::from_json(const nlohmann::json& j) {
  ClassifierShape s;
  s.channels = j.at("channels");
  s.height = j.at("height");
  s.width = j.at("width");
  s.num_classes = j.at("num_classes");
  s.widths = j.at("widths").get<std::vector<int>>();
  s.groups = j.at("groups");
  return s;
}

ConvClassifier::ConvClassifier(ClassifierShape shape, std::uint64_t seed) : shape_(std::move(shape)) {
  if (shape_.widths.empty()) throw ConfigError("classifier: at least one stage width required");
  const int pools = static_cast<int>(shape_.widths.size()) - 1;
  if ((shape_.height >> pools) << pools != shape_.height || (shape_.width >> pools) << pools != shape_.width) {
    throw ConfigError("classifier: image size must be divisible by 2^(stages-1)");
  }
  Rng rng(seed);
  int in = shape_.channels;
  for (std::size_t i = 0; i < shape_.widths.size(); ++i) {
    const std::string name = "stage" + std::to_string(i);
    const int w = shape_.widths[i];
    stages_.push_back({Conv2d(name + ".conv", in, w, 3, 1, 1, rng), GroupNorm(name + ".norm", shape_.groups, w), ReLU{}});
    in = w;
  }
  head_ = Linear("head", in, shape_.num_classes, rng);
}

Tensor ConvClassifier::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != shape_.channels || x.dim(2) != shape_.height || x.dim(3) != shape_.width) {
    throw UsageError("classifier: input " + x.shape_string() + " does not match model image shape");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    h = stages_[i].act.forward(stages_[i].norm.forward(stages_[i].conv.forward(h)));
    if (i + 1 < stages_.size()) {
      h = avg_pool2(h);
    }
  }
  last_h_ = h.dim(2);
  last_w_ = h.dim(3);
  return head_.forward(global_avg_pool(h));
}

void ConvClassifier::backward(const Tensor& grad_logits) {
  if (frozen_) throw ContractViolation("classifier is frozen; backward pass refused");
  Tensor g = global_avg_pool_backward(head_.backward(grad_logits), last_h_, last_w_);
  for (std::size_t k = stages_.size(); k-- > 0;) {
    g = stages_[k].conv.backward(stages_[k].norm.backward(stages_[k].act.backward(g)));
    if (k > 0) g = avg_pool2_backward(g);
  }
}

ParamList ConvClassifier::params() {
  ParamList out;
  for (auto& s : stages_) {
    s.conv.collect(out);
    s.norm.collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<NamedTensor> ConvClassifier::state() { return snapshot(params()); }
void ConvClassifier::load_state(const std::vector<NamedTensor>& tensors) { restore(params(), tensors); }

}  // namespace ddb::nn
