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

// Backbone building blocks: embedding stems, downsampling with CBAM, agent
// attention, squeeze-and-excitation, the gate-enhanced feedforward block and
// their composition into a four-stage backbone.

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "gapose/config.hpp"
#include "gapose/nn.hpp"

namespace gapose::blocks {

using autograd::Var;
using nn::Context;
using nn::Initializer;

// conv3x3/s2 (3 -> w/2) BN GELU, conv3x3/s2 (w/2 -> w) BN GELU,
// conv3x3/s1 (w -> w) BN. Output spatial = input / 4.
class GlaceStem {
 public:
  GlaceStem() = default;
  GlaceStem(const Initializer& init, std::int64_t in_channels, std::int64_t width);
  Var forward(const Context& ctx, const Var& image) const;

 private:
  nn::Conv2d conv1_, conv2_, refine_;
  nn::BatchNorm2d bn1_, bn2_, bn3_;
};

// Fallback stem: one 4x4 stride-4 patch conv and BN.
class PlainStem {
 public:
  PlainStem() = default;
  PlainStem(const Initializer& init, std::int64_t in_channels, std::int64_t width);
  Var forward(const Context& ctx, const Var& image) const;

 private:
  nn::Conv2d patch_;
  nn::BatchNorm2d bn_;
};

struct CbamTrace {
  Tensor channel_gate;  // [B,C,1,1]
  Tensor spatial_gate;  // [B,1,H,W]
};

// Channel attention (shared bottleneck MLP over avg- and max-pooled
// descriptors, summed, sigmoid) followed by spatial attention (7x7 conv over
// channel-wise mean and max maps, sigmoid).
class Cbam {
 public:
  Cbam() = default;
  Cbam(const Initializer& init, std::int64_t channels, std::int64_t ratio);
  Var forward(const Context& ctx, const Var& x, CbamTrace* trace = nullptr) const;

  nn::Linear& mlp_out() { return fc2_; }
  nn::Conv2d& spatial_conv() { return spatial_; }

 private:
  nn::Linear fc1_, fc2_;
  nn::Conv2d spatial_;
};

// conv3x3/s2 C -> 2C, BN, GELU, then CBAM.
class DownsampleBlock {
 public:
  DownsampleBlock() = default;
  DownsampleBlock(const Initializer& init, std::int64_t in_channels, bool use_cbam, std::int64_t cbam_ratio);
  Var forward(const Context& ctx, const Var& x) const;

  nn::Conv2d& conv() { return conv_; }
  Cbam* cbam() { return cbam_ ? &*cbam_ : nullptr; }

 private:
  nn::Conv2d conv_;
  nn::BatchNorm2d bn_;
  std::optional<Cbam> cbam_;
};

// Global average pool, FC C -> C/r, ReLU, FC C/r -> C, sigmoid, channel scale.
class SeBlock {
 public:
  SeBlock() = default;
  SeBlock(const Initializer& init, std::int64_t channels, std::int64_t reduction);
  Var forward(const Context& ctx, const Var& x, Tensor* scale = nullptr) const;

  nn::Linear& fc2() { return fc2_; }

 private:
  nn::Linear fc1_, fc2_;
};

enum class TokenMixing {
  // Agents are Q adaptively pooled to an a_h x a_w grid.
  pooled_agents,
  // Agents are the query tokens themselves (n_agents = N, no pooling).
  token_agents,
  // Reference softmax(Q K^T / sqrt(d)) V, quadratic in N.
  full,
};

struct AttentionTrace {
  std::vector<Tensor> stage1;  // agent -> key softmax [B,heads,n,N], one entry
  std::vector<Tensor> stage2;  // query -> agent softmax [B,heads,N,n]
  std::uint64_t projection_macs = 0;
  std::uint64_t mixing_macs = 0;
};

// Factorization of n agents into a grid fitting an h x w map, as square as
// possible. Throws ConfigError when none exists.
std::pair<std::int64_t, std::int64_t> agent_grid(std::int64_t n_agents, std::int64_t h, std::int64_t w);

// Two-stage agent attention over the H*W tokens of a feature map:
//   A   = pool(Q)                       [n, d] per head
//   V_a = softmax(A K^T / sqrt(d)) V    [n, d]
//   Y   = softmax(Q A^T / sqrt(d)) V_a  [N, d]
// Heads are concatenated and projected back to C. No positional terms.
class AgentAttention {
 public:
  AgentAttention() = default;
  AgentAttention(const Initializer& init, std::int64_t channels, std::int64_t heads, std::int64_t n_agents);

  Var forward(const Context& ctx, const Var& x, TokenMixing mode = TokenMixing::pooled_agents,
              AttentionTrace* trace = nullptr) const;

  std::int64_t heads() const { return heads_; }
  std::int64_t n_agents() const { return n_agents_; }
  nn::Linear& q() { return q_; }
  nn::Linear& k() { return k_; }
  nn::Linear& v() { return v_; }
  nn::Linear& out() { return o_; }

 private:
  std::int64_t channels_ = 0, heads_ = 1, n_agents_ = 1;
  nn::Linear q_, k_, v_, o_;
};

// Attention-off fallback: 7x7 depthwise conv then pointwise conv.
class LargeKernelMixer {
 public:
  LargeKernelMixer() = default;
  LargeKernelMixer(const Initializer& init, std::int64_t channels);
  Var forward(const Context& ctx, const Var& x) const;

 private:
  nn::Conv2d depthwise_, pointwise_;
};

// x + Proj( DW3x3(GELU(PW_v x)) * sigmoid(PW_g x) ), Proj zero-initialized.
class Gefb {
 public:
  Gefb() = default;
  Gefb(const Initializer& init, std::int64_t channels, std::int64_t expansion);
  Var forward(const Context& ctx, const Var& x) const;

  nn::Conv2d& value_in() { return value_in_; }
  nn::Conv2d& value_dw() { return value_dw_; }
  nn::Conv2d& gate() { return gate_; }
  nn::Conv2d& proj() { return proj_; }

 private:
  nn::Conv2d value_in_, value_dw_, gate_, proj_;
};

// GEFB-off fallback: x + PW2(GELU(PW1 x)), PW2 zero-initialized.
class PointwiseMlp {
 public:
  PointwiseMlp() = default;
  PointwiseMlp(const Initializer& init, std::int64_t channels, std::int64_t expansion);
  Var forward(const Context& ctx, const Var& x) const;

 private:
  nn::Conv2d fc1_, fc2_;
};

// y1 = x + Mixer(BN(x)); y2 = SE(y1); y3 = FFN(y2) (FFN carries its residual).
class BackboneBlock {
 public:
  BackboneBlock() = default;
  BackboneBlock(const Initializer& init, std::int64_t channels, const ModelConfig& config);
  Var forward(const Context& ctx, const Var& x) const;

  AgentAttention* attention() { return attention_ ? &*attention_ : nullptr; }
  Gefb* gefb() { return gefb_ ? &*gefb_ : nullptr; }
  SeBlock* se() { return se_ ? &*se_ : nullptr; }

 private:
  nn::BatchNorm2d norm_;
  std::optional<AgentAttention> attention_;
  std::optional<LargeKernelMixer> large_kernel_;
  std::optional<SeBlock> se_;
  std::optional<Gefb> gefb_;
  std::optional<PointwiseMlp> mlp_;
};

struct StageSpec {
  std::int64_t channels;
  std::int64_t depth;
  bool downsample;
};

class Stage {
 public:
  Stage() = default;
  Stage(const Initializer& init, const StageSpec& spec, const ModelConfig& config);
  Var forward(const Context& ctx, const Var& x) const;

  DownsampleBlock* downsample() { return downsample_ ? &*downsample_ : nullptr; }
  std::vector<BackboneBlock>& blocks() { return blocks_; }

 private:
  std::optional<DownsampleBlock> downsample_;
  std::vector<BackboneBlock> blocks_;
};

// Per-stage outputs F_1..F_4 at strides 4, 8, 16, 32.
struct FeaturePyramid {
  std::vector<Var> levels;
  std::vector<int> strides;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const Initializer& init, const ModelConfig& config);
  FeaturePyramid forward(const Context& ctx, const Var& x) const;

  std::vector<Stage>& stages() { return stages_; }

 private:
  std::vector<Stage> stages_;
};

}  // namespace gapose::blocks
