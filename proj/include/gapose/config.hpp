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

#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "json.hpp"

namespace gapose {

// Component switches. Every switched-off component is replaced by a
// fallback with the same input/output shapes.
struct Toggles {
  bool glace = true;            // off: single 4x4 stride-4 patch conv + BN
  bool agent_attention = true;  // off: 7x7 depthwise + pointwise conv
  bool gefb = true;             // off: two-layer pointwise MLP
  bool dysample = true;         // off: plain bilinear resize
  bool cbam = true;
  bool se = true;
};

struct LossWeights {
  double gt = 1.0;
  double output_distill = 0.5;
  double token_distill = 0.1;
};

enum class SkeletonKind { coco17, tiny8 };

struct DatasetSpec {
  std::int64_t n_samples = 8;
  std::uint64_t seed = 1;
  SkeletonKind skeleton = SkeletonKind::coco17;
  // Per-joint jitter, in units of figure height.
  double pose_jitter = 0.02;
  double occlusion_prob = 0.0;
  // Amplitude of the uniform background noise.
  double noise_level = 0.2;
  // Gaussian target width in heatmap pixels.
  double heatmap_sigma = 2.0;
};

struct ModelConfig {
  std::int64_t input_h = 256;
  std::int64_t input_w = 192;
  std::int64_t stem_width = 96;
  std::array<std::int64_t, 4> stage_channels{96, 192, 384, 768};
  std::array<std::int64_t, 4> stage_depths{2, 2, 4, 2};
  // Attention heads per stage = channels / heads_divisor.
  std::int64_t heads_divisor = 32;
  std::int64_t n_agents = 16;
  std::int64_t fusion_width = 256;
  std::array<std::int64_t, 2> decoder_widths{128, 64};
  std::int64_t num_keypoints = 17;
  std::int64_t gefb_expansion = 2;
  std::int64_t se_reduction = 4;
  std::int64_t cbam_ratio = 8;
  std::int64_t token_count = 4;
  std::int64_t token_dim = 16;
  Toggles toggles{};
  LossWeights loss_weights{};
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  std::int64_t batch_size = 8;
  // Empty disables output distillation.
  std::string teacher_checkpoint;
  DatasetSpec dataset{};

  std::int64_t heatmap_h() const { return input_h / 4; }
  std::int64_t heatmap_w() const { return input_w / 4; }
  std::int64_t fusion_h() const { return input_h / 16; }
  std::int64_t fusion_w() const { return input_w / 16; }

  // Throws ConfigError("<field>: <reason>").
  void validate() const;
};

ModelConfig default_config();
// Desk-scale configuration used by tests and CI.
ModelConfig tiny_config();

nlohmann::json to_json(const ModelConfig& config);
// Unknown keys and wrong types -> ConfigError naming the field. Missing keys
// keep their defaults.
ModelConfig config_from_json(const nlohmann::json& j);
// Accepts // and /* */ comments.
ModelConfig load_config_file(const std::string& path);

}  // namespace gapose
