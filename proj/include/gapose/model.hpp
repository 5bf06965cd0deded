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

// Full pose model, Adam, the training step and checkpoint serialization.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "gapose/blocks.hpp"
#include "gapose/fusion_head.hpp"
#include "gapose/losses.hpp"

namespace gapose::model {

using autograd::Var;
using nn::Context;

struct Batch {
  Tensor images;      // [B,3,H,W]
  Tensor heatmaps;    // [B,J,H/4,W/4]
  Tensor visibility;  // [B,J], 1 visible / 0 not
};

struct ForwardResult {
  Var stem;
  blocks::FeaturePyramid pyramid;
  head::HeadOutput head;
  Var pooled;  // global average of the refined map, [B, fusion_width]

  const Var& heatmap() const { return head.heatmap; }
};

class PoseModel {
 public:
  // Validates the config (ConfigError naming the field) and initializes
  // every parameter deterministically from config.seed.
  explicit PoseModel(const ModelConfig& config);

  PoseModel(PoseModel&&) = default;
  PoseModel& operator=(PoseModel&&) = default;

  ForwardResult forward(const Context& ctx, const Var& images) const;
  // Eval-mode heatmaps without building gradients.
  Tensor predict(const Tensor& images) const;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  const losses::TokenBank& token_bank() const { return bank_; }
  losses::TokenBank& token_bank() { return bank_; }
  blocks::Backbone& backbone() { return backbone_; }
  head::FusionHead& head() { return head_; }

 private:
  ModelConfig config_;
  nn::ParameterSet params_;
  std::optional<blocks::GlaceStem> glace_;
  std::optional<blocks::PlainStem> plain_;
  blocks::Backbone backbone_;
  head::FusionHead head_;
  losses::TokenBank bank_;
};

// Trainable element count, buffers excluded.
std::int64_t count_params(const PoseModel& model);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit Adam(AdamOptions options = {});

  // One update of every trainable parameter from its accumulated grad.
  void step(nn::ParameterSet& params);

  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  AdamOptions options_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

struct StepReport {
  double total = 0.0;
  std::vector<losses::LossTerm> terms;

  double term(std::string_view name) const;
};

// Forward, weighted loss, backward, Adam update, gradient reset. A teacher
// (frozen, evaluated in eval mode) enables output distillation.
// Non-finite loss -> TrainingDiverged, parameters untouched.
StepReport train_step(PoseModel& model, Adam& optimizer, const Batch& batch, const PoseModel* teacher = nullptr);

// Loss report of the current parameters without updating them, with BN in
// the requested mode.
StepReport evaluate_loss(const PoseModel& model, const Batch& batch, bool training, const PoseModel* teacher = nullptr);

void save_checkpoint(const PoseModel& model, const std::string& path, const Adam* optimizer = nullptr);

struct Checkpoint {
  std::unique_ptr<PoseModel> model;
  std::optional<Adam> optimizer;
};

// Rebuilds the model from the embedded config. FormatError on bad magic,
// version, truncation, duplicates, missing or mis-shaped tensors.
Checkpoint load_checkpoint(const std::string& path);

// Loads tensors into an existing model after validating every name and
// shape against it; the model is left untouched on error.
void load_weights(PoseModel& model, const std::string& path, Adam* optimizer = nullptr);

}  // namespace gapose::model
