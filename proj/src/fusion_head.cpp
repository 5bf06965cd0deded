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

#include "gapose/fusion_head.hpp"

#include <string>

#include "gapose/errors.hpp"

namespace gapose::head {

Tensor resize_grid(std::int64_t batch, std::int64_t h, std::int64_t w, std::int64_t oh, std::int64_t ow) {
  Tensor grid(Shape{batch, oh, ow, 2});
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  std::size_t i = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        grid[i++] = (static_cast<double>(x) + 0.5) * sx - 0.5;
        grid[i++] = (static_cast<double>(y) + 0.5) * sy - 0.5;
      }
    }
  }
  return grid;
}

Var bilinear_resize(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  const Shape& s = x.shape();
  return ops::grid_sample_bilinear(x, x.graph().constant(resize_grid(s[0], s[2], s[3], out_h, out_w)));
}

Dysample::Dysample(const Initializer& init, std::int64_t channels, int scale) : scale_(scale) {
  if (scale != 2 && scale != 4) throw ConfigError("dysample: unsupported scale " + std::to_string(scale));
  nn::Conv2d::Spec s{channels, 2 * scale * scale, 1};
  s.weight_init = nn::Init::zeros;
  s.bias_init = nn::Init::zeros;
  offset_ = nn::Conv2d(init, "offset", s);
}

Var Dysample::forward(const Context& ctx, const Var& x) const {
  const Shape& s = x.shape();
  const std::int64_t b = s[0], h = s[2], w = s[3], sc = scale_;
  // [B, 2*s*s, H, W] -> [B, 2, s, s, H, W] -> [B, H, s, W, s, 2] -> [B, sH, sW, 2]
  Var off = ops::reshape(offset_.forward(ctx, x), {b, 2, sc, sc, h, w});
  off = ops::reshape(ops::permute(off, {0, 4, 2, 5, 3, 1}), {b, sc * h, sc * w, 2});
  const Var base = ctx.graph.constant(resize_grid(b, h, w, sc * h, sc * w));
  return ops::grid_sample_bilinear(x, ops::add(base, ops::mul(off, 0.25)));
}

FusionHead::FusionHead(const Initializer& init, const ModelConfig& config) {
  std::int64_t stride = 4;
  for (std::size_t i = 0; i < 4; ++i) {
    strides_.push_back(static_cast<int>(stride));
    fused_channels_ += config.stage_channels[i];
    if (stride > target_stride_ && config.toggles.dysample) {
      upsamplers_.emplace_back(std::in_place, init.scope("dysample." + std::to_string(i)), config.stage_channels[i],
                               static_cast<int>(stride / target_stride_));
    } else {
      upsamplers_.emplace_back(std::nullopt);
    }
    stride *= 2;
  }
  refine_ = nn::Conv2d(init, "refine", nn::Conv2d::Spec{fused_channels_, config.fusion_width, 1});
  refine_bn_ = nn::BatchNorm2d(init, "refine_bn", config.fusion_width);
  const Deconv2dOptions up{2, 1};
  deconv1_ = nn::Deconv2d(init, "deconv1", config.fusion_width, config.decoder_widths[0], 4, up);
  bn1_ = nn::BatchNorm2d(init, "bn1", config.decoder_widths[0]);
  deconv2_ = nn::Deconv2d(init, "deconv2", config.decoder_widths[0], config.decoder_widths[1], 4, up);
  bn2_ = nn::BatchNorm2d(init, "bn2", config.decoder_widths[1]);
  final_ = nn::Conv2d(init, "final", nn::Conv2d::Spec{config.decoder_widths[1], config.num_keypoints, 1});
}

Var FusionHead::resize_level(const Context& ctx, std::size_t level, const Var& x, std::int64_t target_h,
                             std::int64_t target_w) const {
  const std::int64_t h = x.dim(2), w = x.dim(3);
  if (h == target_h && w == target_w) return x;
  if (h < target_h && w < target_w) {
    if (target_h % h != 0 || target_w % w != 0 || target_h / h != target_w / w) {
      throw ConfigError("fusion: level " + std::to_string(level) + " (" + std::to_string(h) + "x" +
                        std::to_string(w) + ") is not an integer upscale of the target");
    }
    if (level < upsamplers_.size() && upsamplers_[level] && upsamplers_[level]->scale() == target_h / h) {
      return upsamplers_[level]->forward(ctx, x);
    }
    return bilinear_resize(x, target_h, target_w);
  }
  if (h > target_h && w > target_w && h % target_h == 0 && w % target_w == 0 && h / target_h == w / target_w) {
    return ops::pool2d(x, ops::PoolKind::avg, static_cast<int>(h / target_h));
  }
  throw ConfigError("fusion: level " + std::to_string(level) + " (" + std::to_string(h) + "x" + std::to_string(w) +
                    ") has no integer factor to " + std::to_string(target_h) + "x" + std::to_string(target_w));
}

HeadOutput FusionHead::forward(const Context& ctx, const blocks::FeaturePyramid& pyramid) const {
  if (pyramid.levels.size() != strides_.size()) throw ShapeError("fusion: expected 4 pyramid levels");
  // The target sits at stride 16, i.e. the third level.
  const Var& target = pyramid.levels[2];
  const std::int64_t th = target.dim(2), tw = target.dim(3);
  HeadOutput out;
  for (std::size_t i = 0; i < pyramid.levels.size(); ++i) {
    out.resized.push_back(resize_level(ctx, i, pyramid.levels[i], th, tw));
  }
  out.fused = ops::concat(out.resized, 1);
  out.refined = ops::gelu(refine_bn_.forward(ctx, refine_.forward(ctx, out.fused)));
  out.heatmap = decode(ctx, out.refined);
  return out;
}

Var FusionHead::decode(const Context& ctx, const Var& refined) const {
  Var h = ops::gelu(bn1_.forward(ctx, deconv1_.forward(ctx, refined)));
  h = ops::gelu(bn2_.forward(ctx, deconv2_.forward(ctx, h)));
  return final_.forward(ctx, h);
}

std::vector<std::vector<Keypoint>> argmax_keypoints(const Tensor& heatmap) {
  if (heatmap.rank() != 4) throw ShapeError("argmax_keypoints: expected [B,J,H,W], got " + to_string(heatmap.shape()));
  const std::int64_t batch = heatmap.dim(0), joints = heatmap.dim(1), h = heatmap.dim(2), w = heatmap.dim(3);
  std::vector<std::vector<Keypoint>> out(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t j = 0; j < joints; ++j) {
      const double* plane = heatmap.data() + (b * joints + j) * h * w;
      std::int64_t best = 0;
      for (std::int64_t i = 1; i < h * w; ++i) {
        if (plane[i] > plane[best]) best = i;
      }
      const std::int64_t py = best / w, px = best % w;
      Keypoint k{static_cast<double>(px), static_cast<double>(py), plane[best]};
      if (px > 0 && px < w - 1) {
        const double d = plane[best + 1] - plane[best - 1];
        if (d > 0) k.x += 0.25;
        if (d < 0) k.x -= 0.25;
      }
      if (py > 0 && py < h - 1) {
        const double d = plane[best + w] - plane[best - w];
        if (d > 0) k.y += 0.25;
        if (d < 0) k.y -= 0.25;
      }
      out[static_cast<std::size_t>(b)].push_back(k);
    }
  }
  return out;
}

}  // namespace gapose::head
