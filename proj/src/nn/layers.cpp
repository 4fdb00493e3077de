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

#include "ddb/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>

#include "ddb/errors.hpp"

namespace ddb::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void init_uniform(Tensor& t, float bound, Rng& rng) {
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
}

Param make_param(const std::string& name, std::vector<int> shape, bool decay) {
  Param p;
  p.name = name;
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  p.decay = decay;
  return p;
}

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw UsageError(std::string(who) + ": expected NCHW input, got " + x.shape_string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
               int pad, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad) {
  weight_ = make_param(name + ".weight", {out_, in_, kernel_, kernel_}, true);
  bias_ = make_param(name + ".bias", {out_}, false);
  const float bound = 1.0F / std::sqrt(static_cast<float>(in_ * kernel_ * kernel_));
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  require_rank4(x, "conv2d");
  if (x.dim(1) != in_) {
    throw UsageError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     x.shape_string());
  }
  n_ = x.dim(0);
  h_ = x.dim(2);
  w_ = x.dim(3);
  ho_ = (h_ + 2 * pad_ - kernel_) / stride_ + 1;
  wo_ = (w_ + 2 * pad_ - kernel_) / stride_ + 1;
  const int K = in_ * kernel_ * kernel_;
  const std::size_t P = static_cast<std::size_t>(ho_) * wo_;
  const std::size_t NP = static_cast<std::size_t>(n_) * P;
  cols_.assign(static_cast<std::size_t>(K) * NP, 0.0F);

  const float* xd = x.data();
  for (int c = 0; c < in_; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const std::size_t row = static_cast<std::size_t>((c * kernel_ + ki) * kernel_ + kj);
        float* dst = cols_.data() + row * NP;
        for (int n = 0; n < n_; ++n) {
          const float* plane = xd + (static_cast<std::size_t>(n) * in_ + c) * h_ * w_;
          float* d = dst + static_cast<std::size_t>(n) * P;
          for (int oy = 0; oy < ho_; ++oy) {
            const int iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= h_) continue;
            for (int ox = 0; ox < wo_; ++ox) {
              const int ix = ox * stride_ - pad_ + kj;
              if (ix < 0 || ix >= w_) continue;
              d[oy * wo_ + ox] = plane[iy * w_ + ix];
            }
          }
        }
      }
    }
  }

  MatR out = CMapR(weight_.value.data(), out_, K) * CMapR(cols_.data(), K, static_cast<Eigen::Index>(NP));
  Tensor y({n_, out_, ho_, wo_});
  float* yd = y.data();
  for (int n = 0; n < n_; ++n) {
    for (int o = 0; o < out_; ++o) {
      const float b = bias_.value[o];
      const float* src = out.data() + static_cast<std::size_t>(o) * NP + static_cast<std::size_t>(n) * P;
      float* dst = yd + (static_cast<std::size_t>(n) * out_ + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const int K = in_ * kernel_ * kernel_;
  const std::size_t P = static_cast<std::size_t>(ho_) * wo_;
  const std::size_t NP = static_cast<std::size_t>(n_) * P;
  if (grad_out.numel() != static_cast<std::size_t>(out_) * NP) {
    throw UsageError(weight_.name + ": backward shape mismatch");
  }
  MatR g(out_, static_cast<Eigen::Index>(NP));
  const float* gd = grad_out.data();
  for (int n = 0; n < n_; ++n) {
    for (int o = 0; o < out_; ++o) {
      const float* src = gd + (static_cast<std::size_t>(n) * out_ + o) * P;
      float* dst = g.data() + static_cast<std::size_t>(o) * NP + static_cast<std::size_t>(n) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p];
    }
  }
  CMapR cols(cols_.data(), K, static_cast<Eigen::Index>(NP));
  MapR(weight_.grad.data(), out_, K).noalias() += g * cols.transpose();
  Eigen::Map<Eigen::VectorXf>(bias_.grad.data(), out_) += g.rowwise().sum();
  MatR dcols = CMapR(weight_.value.data(), out_, K).transpose() * g;

  Tensor gx({n_, in_, h_, w_});
  float* gxd = gx.data();
  for (int c = 0; c < in_; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const std::size_t row = static_cast<std::size_t>((c * kernel_ + ki) * kernel_ + kj);
        const float* src = dcols.data() + row * NP;
        for (int n = 0; n < n_; ++n) {
          float* plane = gxd + (static_cast<std::size_t>(n) * in_ + c) * h_ * w_;
          const float* s = src + static_cast<std::size_t>(n) * P;
          for (int oy = 0; oy < ho_; ++oy) {
            const int iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= h_) continue;
            for (int ox = 0; ox < wo_; ++ox) {
              const int ix = ox * stride_ - pad_ + kj;
              if (ix < 0 || ix >= w_) continue;
              plane[iy * w_ + ix] += s[oy * wo_ + ox];
            }
          }
        }
      }
    }
  }
  return gx;
}

void Conv2d::collect(ParamList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in_features, int out_features, Rng& rng)
    : in_(in_features), out_(out_features) {
  weight_ = make_param(name + ".weight", {out_, in_}, true);
  bias_ = make_param(name + ".bias", {out_}, false);
  const float bound = 1.0F / std::sqrt(static_cast<float>(in_));
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw UsageError(weight_.name + ": expected [N," + std::to_string(in_) + "], got " + x.shape_string());
  }
  input_ = x;
  const int n = x.dim(0);
  Tensor y({n, out_});
  MapR(y.data(), n, out_).noalias() =
      CMapR(x.data(), n, in_) * CMapR(weight_.value.data(), out_, in_).transpose();
  MapR ym(y.data(), n, out_);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int n = input_.dim(0);
  CMapR g(grad_out.data(), n, out_);
  MapR(weight_.grad.data(), out_, in_).noalias() += g.transpose() * CMapR(input_.data(), n, in_);
  Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_) += g.colwise().sum();
  Tensor gx({n, in_});
  MapR(gx.data(), n, in_).noalias() = g * CMapR(weight_.value.data(), out_, in_);
  return gx;
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// GroupNorm

GroupNorm::GroupNorm(const std::string& name, int groups, int channels) : groups_(groups), channels_(channels) {
  if (groups <= 0 || channels % groups != 0) {
    throw ConfigError(name + ": channels must be divisible by groups");
  }
  gamma_ = make_param(name + ".gamma", {channels}, false);
  beta_ = make_param(name + ".beta", {channels}, false);
  gamma_.value.fill(1.0F);
}

Tensor GroupNorm::forward(const Tensor& x) {
  require_rank4(x, "group_norm");
  constexpr float kEps = 1e-5F;
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  const int cpg = channels_ / groups_;
  const std::size_t m = static_cast<std::size_t>(cpg) * hw;
  xhat_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(n) * groups_, 0.0F);
  Tensor y(x.shape());
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + g * cpg) * hw;
      const float* src = x.data() + off;
      double mean = 0.0;
      for (std::size_t k = 0; k < m; ++k) mean += src[k];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double d = src[k] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const float inv = static_cast<float>(1.0 / std::sqrt(var + kEps));
      inv_std_[static_cast<std::size_t>(i) * groups_ + g] = inv;
      float* xh = xhat_.data() + off;
      float* dst = y.data() + off;
      for (int c = 0; c < cpg; ++c) {
        const float ga = gamma_.value[g * cpg + c];
        const float be = beta_.value[g * cpg + c];
        for (int p = 0; p < hw; ++p) {
          const std::size_t k = static_cast<std::size_t>(c) * hw + p;
          xh[k] = static_cast<float>(src[k] - mean) * inv;
          dst[k] = xh[k] * ga + be;
        }
      }
    }
  }
  return y;
}

Tensor GroupNorm::backward(const Tensor& grad_out) {
  const int n = xhat_.dim(0);
  const int hw = xhat_.dim(2) * xhat_.dim(3);
  const int cpg = channels_ / groups_;
  const std::size_t m = static_cast<std::size_t>(cpg) * hw;
  Tensor gx(xhat_.shape());
  std::vector<float> dxhat(m);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + g * cpg) * hw;
      const float* gy = grad_out.data() + off;
      const float* xh = xhat_.data() + off;
      double mean_d = 0.0, mean_dx = 0.0;
      for (int c = 0; c < cpg; ++c) {
        const int ch = g * cpg + c;
        const float ga = gamma_.value[ch];
        float sg = 0.0F, sb = 0.0F;
        for (int p = 0; p < hw; ++p) {
          const std::size_t k = static_cast<std::size_t>(c) * hw + p;
          sg += gy[k] * xh[k];
          sb += gy[k];
          dxhat[k] = gy[k] * ga;
          mean_d += dxhat[k];
          mean_dx += dxhat[k] * xh[k];
        }
        gamma_.grad[ch] += sg;
        beta_.grad[ch] += sb;
      }
      mean_d /= static_cast<double>(m);
      mean_dx /= static_cast<double>(m);
      const float inv = inv_std_[static_cast<std::size_t>(i) * groups_ + g];
      float* dst = gx.data() + off;
      for (std::size_t k = 0; k < m; ++k) {
        dst[k] = inv * static_cast<float>(dxhat[k] - mean_d - xh[k] * mean_dx);
      }
    }
  }
  return gx;
}

void GroupNorm::collect(ParamList& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ---------------------------------------------------------------------------
// Embedding

Embedding::Embedding(const std::string& name, int vocab, int dim, Rng& rng) : vocab_(vocab), dim_(dim) {
  table_ = make_param(name + ".table", {vocab, dim}, false);
  for (float& v : table_.value.values()) v = rng.normal();
}

Tensor Embedding::forward(const std::vector<int>& indices) {
  indices_ = indices;
  Tensor y({static_cast<int>(indices.size()), dim_});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= vocab_) {
      throw UsageError(table_.name + ": index " + std::to_string(idx) + " outside vocabulary of " +
                       std::to_string(vocab_));
    }
    std::copy_n(table_.value.data() + static_cast<std::size_t>(idx) * dim_, dim_,
                y.data() + i * static_cast<std::size_t>(dim_));
  }
  return y;
}

void Embedding::backward(const Tensor& grad_out) {
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    float* dst = table_.grad.data() + static_cast<std::size_t>(indices_[i]) * dim_;
    const float* src = grad_out.data() + i * static_cast<std::size_t>(dim_);
    for (int d = 0; d < dim_; ++d) dst[d] += src[d];
  }
}

void Embedding::collect(ParamList& out) { out.push_back(&table_); }

// ---------------------------------------------------------------------------
// Activations

Tensor SiLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float v = x[i];
    y[i] = v / (1.0F + std::exp(-v));
  }
  return y;
}

Tensor SiLU::backward(const Tensor& grad_out) const {
  Tensor gx(input_.shape());
  for (std::size_t i = 0; i < gx.numel(); ++i) {
    const float v = input_[i];
    const float s = 1.0F / (1.0F + std::exp(-v));
    gx[i] = grad_out[i] * s * (1.0F + v * (1.0F - s));
  }
  return gx;
}

Tensor ReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0F ? x[i] : 0.0F;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) const {
  Tensor gx(input_.shape());
  for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = input_[i] > 0.0F ? grad_out[i] : 0.0F;
  return gx;
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor avg_pool2(const Tensor& x) {
  require_rank4(x, "avg_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  Tensor y({n, c, ho, wo});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
    float* dst = y.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        dst[i * wo + j] = 0.25F * (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
                                   src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }
  return y;
}

Tensor avg_pool2_backward(const Tensor& grad_out) {
  const int n = grad_out.dim(0), c = grad_out.dim(1), ho = grad_out.dim(2), wo = grad_out.dim(3);
  const int h = ho * 2, w = wo * 2;
  Tensor gx({n, c, h, w});
  for (int p = 0; p < n * c; ++p) {
    const float* src = grad_out.data() + static_cast<std::size_t>(p) * ho * wo;
    float* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) dst[i * w + j] = 0.25F * src[(i / 2) * wo + j / 2];
    }
  }
  return gx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * hw;
    float s = 0.0F;
    for (int k = 0; k < hw; ++k) s += src[k];
    y[p] = s / static_cast<float>(hw);
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, int height, int width) {
  const int n = grad_out.dim(0), c = grad_out.dim(1), hw = height * width;
  Tensor gx({n, c, height, width});
  for (int p = 0; p < n * c; ++p) {
    const float v = grad_out[p] / static_cast<float>(hw);
    std::fill_n(gx.data() + static_cast<std::size_t>(p) * hw, hw, v);
  }
  return gx;
}

Tensor upsample2(const Tensor& x) {
  require_rank4(x, "upsample2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
    float* dst = y.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return y;
}

Tensor upsample2_backward(const Tensor& grad_out) {
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2) / 2, w = grad_out.dim(3) / 2;
  Tensor gx({n, c, h, w});
  for (int p = 0; p < n * c; ++p) {
    const float* src = grad_out.data() + static_cast<std::size_t>(p) * 4 * h * w;
    float* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
    }
  }
  return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat");
  require_rank4(b, "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw UsageError("concat_channels: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor y({n, ca + cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    float* dst = y.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
    std::copy_n(a.data() + static_cast<std::size_t>(i) * ca * hw, static_cast<std::size_t>(ca) * hw, dst);
    std::copy_n(b.data() + static_cast<std::size_t>(i) * cb * hw, static_cast<std::size_t>(cb) * hw,
                dst + static_cast<std::size_t>(ca) * hw);
  }
  return y;
}

void split_channels(const Tensor& grad, int channels_a, Tensor& grad_a, Tensor& grad_b) {
  const int n = grad.dim(0), c = grad.dim(1), h = grad.dim(2), w = grad.dim(3), hw = h * w;
  const int cb = c - channels_a;
  grad_a = Tensor({n, channels_a, h, w});
  grad_b = Tensor({n, cb, h, w});
  for (int i = 0; i < n; ++i) {
    const float* src = grad.data() + static_cast<std::size_t>(i) * c * hw;
    std::copy_n(src, static_cast<std::size_t>(channels_a) * hw,
                grad_a.data() + static_cast<std::size_t>(i) * channels_a * hw);
    std::copy_n(src + static_cast<std::size_t>(channels_a) * hw, static_cast<std::size_t>(cb) * hw,
                grad_b.data() + static_cast<std::size_t>(i) * cb * hw);
  }
}

void add_channel_bias(Tensor& x, const Tensor& bias) {
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (bias.rank() != 2 || bias.dim(0) != n || bias.dim(1) != c) {
    throw UsageError("add_channel_bias: bias " + bias.shape_string() + " does not match " + x.shape_string());
  }
  for (int p = 0; p < n * c; ++p) {
    float* dst = x.data() + static_cast<std::size_t>(p) * hw;
    const float b = bias[p];
    for (int k = 0; k < hw; ++k) dst[k] += b;
  }
}

Tensor channel_bias_grad(const Tensor& grad) {
  const int n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
  Tensor g({n, c});
  for (int p = 0; p < n * c; ++p) {
    const float* src = grad.data() + static_cast<std::size_t>(p) * hw;
    float s = 0.0F;
    for (int k = 0; k < hw; ++k) s += src[k];
    g[p] = s;
  }
  return g;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) {
    throw UsageError("add_inplace: shape " + src.shape_string() + " vs " + dst.shape_string());
  }
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

Tensor timestep_encoding(const std::vector<int>& timesteps, int dim) {
  const int half = dim / 2;
  Tensor y({static_cast<int>(timesteps.size()), dim});
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const double t = timesteps[i];
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(1, half - 1));
      y[i * dim + k] = static_cast<float>(std::sin(t * freq));
      y[i * dim + half + k] = static_cast<float>(std::cos(t * freq));
    }
  }
  return y;
}

void zero_grad(const ParamList& params) {
  for (Param* p : params) p->grad.fill(0.0F);
}

}  // namespace ddb::nn
