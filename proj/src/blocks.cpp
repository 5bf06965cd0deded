// Copyright 2026 The gapose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gapose/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "gapose/errors.hpp"
#include "gapose/kernels.hpp"

namespace gapose::blocks {
namespace {

using nn::Init;

nn::Conv2d::Spec conv_spec(std::int64_t in, std::int64_t out, int k, int stride = 1, int groups = 1) {
  nn::Conv2d::Spec s{in, out, k};
  s.opts.stride = stride;
  s.opts.padding = k / 2;
  s.opts.groups = groups;
  return s;
}

void require_rank4(const Var& x, const char* who) {
  if (x.value().rank() != 4) throw ShapeError(std::string(who) + ": expected [B,C,H,W], got " + to_string(x.shape()));
}

// [B,C,H,W] -> [B,H*W,C]
Var to_tokens(const Var& x) {
  const Shape& s = x.shape();
  return ops::permute(ops::reshape(x, {s[0], s[1], s[2] * s[3]}), {0, 2, 1});
}

// [B,N,C] -> [B,heads,N,d]
Var split_heads(const Var& t, std::int64_t heads) {
  const Shape& s = t.shape();
  return ops::permute(ops::reshape(t, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [B,heads,N,d] -> [B,N,heads*d]
Var merge_heads(const Var& t) {
  const Shape& s = t.shape();
  return ops::reshape(ops::permute(t, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

Var transpose_last(const Var& t) { return ops::permute(t, {0, 1, 3, 2}); }

// softmax(a b^T * scale) over the last axis.
Var attention_weights(const Var& a, const Var& b, double scale) {
  return ops::softmax(ops::mul(ops::matmul(a, transpose_last(b)), scale), -1);
}

}  // namespace

GlaceStem::GlaceStem(const Initializer& init, std::int64_t in_channels, std::int64_t width) {
  if (width % 2 != 0) throw ConfigError("stem_width: must be even");
  conv1_ = nn::Conv2d(init, "conv1", conv_spec(in_channels, width / 2, 3, 2));
  bn1_ = nn::BatchNorm2d(init, "bn1", width / 2);
  conv2_ = nn::Conv2d(init, "conv2", conv_spec(width / 2, width, 3, 2));
  bn2_ = nn::BatchNorm2d(init, "bn2", width);
  refine_ = nn::Conv2d(init, "refine", conv_spec(width, width, 3, 1));
  bn3_ = nn::BatchNorm2d(init, "bn3", width);
}

Var GlaceStem::forward(const Context& ctx, const Var& image) const {
  require_rank4(image, "stem");
  if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
    throw ShapeError("stem: spatial dims must be divisible by 4, got " + to_string(image.shape()));
  }
  Var h = ops::gelu(bn1_.forward(ctx, conv1_.forward(ctx, image)));
  h = ops::gelu(bn2_.forward(ctx, conv2_.forward(ctx, h)));
  return bn3_.forward(ctx, refine_.forward(ctx, h));
}

PlainStem::PlainStem(const Initializer& init, std::int64_t in_channels, std::int64_t width) {
  nn::Conv2d::Spec s{in_channels, width, 4};
  s.opts.stride = 4;
  patch_ = nn::Conv2d(init, "patch", s);
  bn_ = nn::BatchNorm2d(init, "bn", width);
}

Var PlainStem::forward(const Context& ctx, const Var& image) const {
  require_rank4(image, "stem");
  if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
    throw ShapeError("stem: spatial dims must be divisible by 4, got " + to_string(image.shape()));
  }
  return bn_.forward(ctx, patch_.forward(ctx, image));
}

Cbam::Cbam(const Initializer& init, std::int64_t channels, std::int64_t ratio) {
  const std::int64_t hidden = std::max<std::int64_t>(1, channels / ratio);
  fc1_ = nn::Linear(init, "mlp1", channels, hidden);
  fc2_ = nn::Linear(init, "mlp2", hidden, channels, Init::fan_in_uniform, Init::zeros);
  nn::Conv2d::Spec s = conv_spec(2, 1, 7);
  s.bias_init = Init::zeros;
  spatial_ = nn::Conv2d(init, "spatial", s);
}

Var Cbam::forward(const Context& ctx, const Var& x, CbamTrace* trace) const {
  require_rank4(x, "cbam");
  const Shape& s = x.shape();
  const Var flat = ops::reshape(x, {s[0], s[1], s[2] * s[3]});
  const Var avg = ops::reshape(ops::mean_axis(flat, 2), {s[0], s[1]});
  const Var mx = ops::reshape(ops::max_axis(flat, 2), {s[0], s[1]});
  auto mlp = [&](const Var& d) { return fc2_.forward(ctx, ops::relu(fc1_.forward(ctx, d))); };
  const Var channel_gate = ops::reshape(ops::sigmoid(ops::add(mlp(avg), mlp(mx))), {s[0], s[1], 1, 1});
  const Var xc = ops::mul(x, channel_gate);

  const Var desc = ops::concat({ops::mean_axis(xc, 1), ops::max_axis(xc, 1)}, 1);
  const Var spatial_gate = ops::sigmoid(spatial_.forward(ctx, desc));
  if (trace) {
    trace->channel_gate = channel_gate.value();
    trace->spatial_gate = spatial_gate.value();
  }
  return ops::mul(xc, spatial_gate);
}

DownsampleBlock::DownsampleBlock(const Initializer& init, std::int64_t in_channels, bool use_cbam,
                                 std::int64_t cbam_ratio) {
  conv_ = nn::Conv2d(init, "conv", conv_spec(in_channels, 2 * in_channels, 3, 2));
  bn_ = nn::BatchNorm2d(init, "bn", 2 * in_channels);
  if (use_cbam) cbam_.emplace(init.scope("cbam"), 2 * in_channels, cbam_ratio);
}

Var DownsampleBlock::forward(const Context& ctx, const Var& x) const {
  require_rank4(x, "downsample");
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("downsample: spatial dims must be even, got " + to_string(x.shape()));
  }
  const Var h = ops::gelu(bn_.forward(ctx, conv_.forward(ctx, x)));
  return cbam_ ? cbam_->forward(ctx, h) : h;
}

SeBlock::SeBlock(const Initializer& init, std::int64_t channels, std::int64_t reduction) {
  if (reduction <= 0 || channels % reduction != 0) {
    throw ConfigError("se_reduction: " + std::to_string(reduction) + " does not divide " + std::to_string(channels) +
                      " channels");
  }
  fc1_ = nn::Linear(init, "fc1", channels, channels / reduction, Init::fan_in_uniform, Init::zeros);
  fc2_ = nn::Linear(init, "fc2", channels / reduction, channels, Init::fan_in_uniform, Init::zeros);
}

Var SeBlock::forward(const Context& ctx, const Var& x, Tensor* scale) const {
  require_rank4(x, "se");
  const Shape& s = x.shape();
  const Var pooled = ops::reshape(ops::mean_axis(ops::reshape(x, {s[0], s[1], s[2] * s[3]}), 2), {s[0], s[1]});
  const Var gate = ops::sigmoid(fc2_.forward(ctx, ops::relu(fc1_.forward(ctx, pooled))));
  if (scale) *scale = gate.value();
  return ops::mul(x, ops::reshape(gate, {s[0], s[1], 1, 1}));
}

std::pair<std::int64_t, std::int64_t> agent_grid(std::int64_t n_agents, std::int64_t h, std::int64_t w) {
  if (n_agents < 1) throw ConfigError("n_agents: must be >= 1");
  std::pair<std::int64_t, std::int64_t> best{0, 0};
  for (std::int64_t ah = 1; ah <= n_agents; ++ah) {
    if (n_agents % ah != 0) continue;
    const std::int64_t aw = n_agents / ah;
    if (ah > h || aw > w) continue;
    if (best.first == 0 || std::llabs(ah - aw) < std::llabs(best.first - best.second)) best = {ah, aw};
  }
  if (best.first == 0) {
    throw ConfigError("n_agents: " + std::to_string(n_agents) + " agents do not fit a " + std::to_string(h) + "x" +
                      std::to_string(w) + " feature map");
  }
  return best;
}

AgentAttention::AgentAttention(const Initializer& init, std::int64_t channels, std::int64_t heads,
                               std::int64_t n_agents)
    : channels_(channels), heads_(heads), n_agents_(n_agents) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("heads: " + std::to_string(heads) + " does not divide " + std::to_string(channels) + " channels");
  }
  if (n_agents < 1) throw ConfigError("n_agents: must be >= 1");
  q_ = nn::Linear(init, "q", channels, channels);
  k_ = nn::Linear(init, "k", channels, channels);
  v_ = nn::Linear(init, "v", channels, channels);
  o_ = nn::Linear(init, "out", channels, channels, Init::fan_in_uniform, Init::zeros);
}

Var AgentAttention::forward(const Context& ctx, const Var& x, TokenMixing mode, AttentionTrace* trace) const {
  require_rank4(x, "attention");
  const Shape& s = x.shape();
  if (s[1] != channels_) throw ShapeError("attention: expected " + std::to_string(channels_) + " channels");
  const std::int64_t b = s[0], h = s[2], w = s[3];
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels_ / heads_));
  std::uint64_t& macs = kernels::mac_counter();

  std::uint64_t start = macs;
  const Var tokens = to_tokens(x);
  const Var q = q_.forward(ctx, tokens);
  const Var qh = split_heads(q, heads_);
  const Var kh = split_heads(k_.forward(ctx, tokens), heads_);
  const Var vh = split_heads(v_.forward(ctx, tokens), heads_);
  std::uint64_t projection = macs - start;

  start = macs;
  Var mixed;
  if (mode == TokenMixing::full) {
    const Var scores = attention_weights(qh, kh, scale);
    if (trace) trace->stage2.push_back(scores.value());
    mixed = ops::matmul(scores, vh);
  } else {
    Var agents;
    if (mode == TokenMixing::pooled_agents) {
      const auto [ah, aw] = agent_grid(n_agents_, h, w);
      const Var qmap = ops::reshape(ops::permute(q, {0, 2, 1}), {b, channels_, h, w});
      const Var pooled = ops::reshape(ops::adaptive_avg_pool2d(qmap, ah, aw), {b, channels_, ah * aw});
      agents = split_heads(ops::permute(pooled, {0, 2, 1}), heads_);
    } else {
      agents = qh;
    }
    const Var s1 = attention_weights(agents, kh, scale);
    const Var agent_values = ops::matmul(s1, vh);
    const Var s2 = attention_weights(qh, agents, scale);
    if (trace) {
      trace->stage1.push_back(s1.value());
      trace->stage2.push_back(s2.value());
    }
    mixed = ops::matmul(s2, agent_values);
  }
  const std::uint64_t mixing = macs - start;

  start = macs;
  const Var y = o_.forward(ctx, merge_heads(mixed));
  projection += macs - start;
  if (trace) {
    trace->projection_macs += projection;
    trace->mixing_macs += mixing;
  }
  return ops::reshape(ops::permute(y, {0, 2, 1}), {b, channels_, h, w});
}

LargeKernelMixer::LargeKernelMixer(const Initializer& init, std::int64_t channels) {
  depthwise_ = nn::Conv2d(init, "dw", conv_spec(channels, channels, 7, 1, static_cast<int>(channels)));
  pointwise_ = nn::Conv2d(init, "pw", conv_spec(channels, channels, 1));
}

Var LargeKernelMixer::forward(const Context& ctx, const Var& x) const {
  return pointwise_.forward(ctx, depthwise_.forward(ctx, x));
}

Gefb::Gefb(const Initializer& init, std::int64_t channels, std::int64_t expansion) {
  const std::int64_t hidden = channels * expansion;
  value_in_ = nn::Conv2d(init, "value_in", conv_spec(channels, hidden, 1));
  value_dw_ = nn::Conv2d(init, "value_dw", conv_spec(hidden, hidden, 3, 1, static_cast<int>(hidden)));
  nn::Conv2d::Spec g = conv_spec(channels, hidden, 1);
  g.bias_init = Init::zeros;
  gate_ = nn::Conv2d(init, "gate", g);
  nn::Conv2d::Spec p = conv_spec(hidden, channels, 1);
  p.weight_init = Init::zeros;
  p.bias_init = Init::zeros;
  proj_ = nn::Conv2d(init, "proj", p);
}

Var Gefb::forward(const Context& ctx, const Var& x) const {
  const Var u = value_dw_.forward(ctx, ops::gelu(value_in_.forward(ctx, x)));
  const Var g = ops::sigmoid(gate_.forward(ctx, x));
  return ops::add(x, proj_.forward(ctx, ops::mul(u, g)));
}

PointwiseMlp::PointwiseMlp(const Initializer& init, std::int64_t channels, std::int64_t expansion) {
  fc1_ = nn::Conv2d(init, "fc1", conv_spec(channels, channels * expansion, 1));
  nn::Conv2d::Spec s = conv_spec(channels * expansion, channels, 1);
  s.weight_init = Init::zeros;
  s.bias_init = Init::zeros;
  fc2_ = nn::Conv2d(init, "fc2", s);
}

Var PointwiseMlp::forward(const Context& ctx, const Var& x) const {
  return ops::add(x, fc2_.forward(ctx, ops::gelu(fc1_.forward(ctx, x))));
}

BackboneBlock::BackboneBlock(const Initializer& init, std::int64_t channels, const ModelConfig& config) {
  norm_ = nn::BatchNorm2d(init, "norm", channels);
  if (config.toggles.agent_attention) {
    attention_.emplace(init.scope("attn"), channels, channels / config.heads_divisor, config.n_agents);
  } else {
    large_kernel_.emplace(init.scope("lk"), channels);
  }
  if (config.toggles.se) se_.emplace(init.scope("se"), channels, config.se_reduction);
  if (config.toggles.gefb) {
    gefb_.emplace(init.scope("gefb"), channels, config.gefb_expansion);
  } else {
    mlp_.emplace(init.scope("mlp"), channels, config.gefb_expansion);
  }
}

Var BackboneBlock::forward(const Context& ctx, const Var& x) const {
  const Var normed = norm_.forward(ctx, x);
  const Var mixed = attention_ ? attention_->forward(ctx, normed) : large_kernel_->forward(ctx, normed);
  Var y = ops::add(x, mixed);
  if (se_) y = se_->forward(ctx, y);
  return gefb_ ? gefb_->forward(ctx, y) : mlp_->forward(ctx, y);
}

Stage::Stage(const Initializer& init, const StageSpec& spec, const ModelConfig& config) {
  if (spec.downsample) {
    if (spec.channels % 2 != 0) throw ConfigError("stage_channels: downsampling stage width must be even");
    downsample_.emplace(init.scope("down"), spec.channels / 2, config.toggles.cbam, config.cbam_ratio);
  }
  for (std::int64_t i = 0; i < spec.depth; ++i) {
    blocks_.emplace_back(init.scope("blocks." + std::to_string(i)), spec.channels, config);
  }
}

Var Stage::forward(const Context& ctx, const Var& x) const {
  Var h = downsample_ ? downsample_->forward(ctx, x) : x;
  for (const auto& block : blocks_) h = block.forward(ctx, h);
  return h;
}

Backbone::Backbone(const Initializer& init, const ModelConfig& config) {
  for (std::size_t i = 0; i < 4; ++i) {
    stages_.emplace_back(init.scope("stages." + std::to_string(i)),
                         StageSpec{config.stage_channels[i], config.stage_depths[i], i > 0}, config);
  }
}

FeaturePyramid Backbone::forward(const Context& ctx, const Var& x) const {
  FeaturePyramid out;
  Var h = x;
  int stride = 4;
  for (const auto& stage : stages_) {
    h = stage.forward(ctx, h);
    out.levels.push_back(h);
    out.strides.push_back(stride);
    stride *= 2;
  }
  return out;
}

}  // namespace gapose::blocks
