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

// Multi-scale fusion of the feature pyramid and the deconvolution decoder
// that turns the fused map into keypoint heatmaps.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gapose/blocks.hpp"

namespace gapose::head {

using autograd::Var;
using nn::Context;
using nn::Initializer;

// Sampling grid [B, sH, sW, 2] of (x, y) source coordinates for a
// half-pixel-aligned resize from h x w to oh x ow.
Tensor resize_grid(std::int64_t batch, std::int64_t h, std::int64_t w, std::int64_t oh, std::int64_t ow);

// Bilinear resize with half-pixel alignment and border clamping.
Var bilinear_resize(const Var& x, std::int64_t out_h, std::int64_t out_w);

// Learned upsampler: a zero-initialized 1x1 conv predicts 2*s*s offsets per
// input pixel, pixel-shuffled to one (dx, dy) per output pixel, scaled by
// 0.25 and added to the bilinear base grid before sampling.
class Dysample {
 public:
  Dysample() = default;
  // scale must be 2 or 4, otherwise ConfigError.
  Dysample(const Initializer& init, std::int64_t channels, int scale);
  Var forward(const Context& ctx, const Var& x) const;

  int scale() const { return scale_; }
  nn::Conv2d& offset_conv() { return offset_; }

 private:
  int scale_ = 2;
  nn::Conv2d offset_;
};

struct HeadOutput {
  std::vector<Var> resized;  // every level at the target resolution
  Var fused;                 // channel concatenation [B, sum C_i, Ht, Wt]
  Var refined;               // after 1x1 conv, BN, GELU
  Var heatmap;               // [B, J, 4 Ht, 4 Wt]
};

class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(const Initializer& init, const ModelConfig& config);

  // Brings one level to (target_h, target_w): upsample coarser levels, mean
  // pool finer ones, pass the target level through.
  Var resize_level(const Context& ctx, std::size_t level, const Var& x, std::int64_t target_h,
                   std::int64_t target_w) const;
  HeadOutput forward(const Context& ctx, const blocks::FeaturePyramid& pyramid) const;
  Var decode(const Context& ctx, const Var& refined) const;

  std::int64_t fused_channels() const { return fused_channels_; }
  Dysample* dysample(std::size_t level) { return upsamplers_[level] ? &*upsamplers_[level] : nullptr; }
  nn::Deconv2d& deconv1() { return deconv1_; }

 private:
  std::int64_t target_stride_ = 16;
  std::int64_t fused_channels_ = 0;
  std::vector<int> strides_;
  std::vector<std::optional<Dysample>> upsamplers_;
  nn::Conv2d refine_;
  nn::BatchNorm2d refine_bn_;
  nn::Deconv2d deconv1_, deconv2_;
  nn::BatchNorm2d bn1_, bn2_;
  nn::Conv2d final_;
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

// Per channel of a [B,J,H,W] heatmap: argmax (lowest row-major index on
// ties) shifted 0.25 px towards the larger horizontal and vertical
// neighbour. Result is indexed [b][j], coordinates in heatmap pixels.
std::vector<std::vector<Keypoint>> argmax_keypoints(const Tensor& heatmap);

}  // namespace gapose::head
