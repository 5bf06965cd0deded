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

// Heatmap supervision, output and token distillation, Gaussian target
// rendering and the PCK metric.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gapose/config.hpp"
#include "gapose/fusion_head.hpp"
#include "gapose/nn.hpp"

namespace gapose::losses {

using autograd::Var;
using nn::Context;

// Mean squared difference over the channels whose visibility is nonzero.
// visibility is [B,J]; an all-zero mask yields a constant 0.
Var mse_heatmap(const Var& a, const Var& b, const Tensor& visibility);
Var mse_heatmap(const Var& a, const Var& b);

// Student against a frozen teacher heatmap; no gradient reaches the teacher.
Var output_distillation(const Var& student, const Tensor& teacher);

struct TokenSelection {
  std::size_t index = 0;
  Var loss;
  std::vector<double> per_token;
};

// Learnable tokens [M,D] and a linear head mapping [token ; pooled features]
// to a heatmap-shaped prediction.
class TokenBank {
 public:
  TokenBank() = default;
  TokenBank(const nn::Initializer& init, std::int64_t tokens, std::int64_t token_dim, std::int64_t feature_dim,
            std::int64_t joints, std::int64_t heatmap_h, std::int64_t heatmap_w);

  // Prediction of token i for pooled features [B, feature_dim].
  Var predict(const Context& ctx, std::size_t token, const Var& pooled) const;

  std::int64_t size() const { return tokens_ ? tokens_->value.dim(0) : 0; }
  Parameter& tokens() { return *tokens_; }
  nn::Linear& head() { return head_; }

 private:
  Parameter* tokens_ = nullptr;
  nn::Linear head_;
  std::int64_t joints_ = 0, heatmap_h_ = 0, heatmap_w_ = 0;
};

// MSE of every token's prediction against the ground truth; returns the
// first minimizer and its loss. Only the selected path is differentiated.
TokenSelection token_distillation(const Context& ctx, const TokenBank& bank, const Var& pooled,
                                  const Tensor& ground_truth);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct RenderedTargets {
  Tensor heatmaps;           // [J,H,W]
  std::vector<bool> visible;  // input visibility with out-of-frame joints cleared
};

// Unnormalized Gaussians exp(-d^2 / (2 sigma^2)) truncated to a 3 sigma
// window; keypoints are in heatmap pixels.
RenderedTargets render_gaussian_targets(const std::vector<Point>& keypoints, const std::vector<bool>& visible,
                                        std::int64_t h, std::int64_t w, double sigma = 2.0);

struct PckResult {
  double value = 0.0;  // NaN when count == 0
  std::int64_t correct = 0;
  std::int64_t count = 0;
};

// A visible keypoint is correct when the prediction lies within
// alpha * sqrt(H^2 + W^2) heatmap pixels of the ground truth.
PckResult pck(const std::vector<std::vector<head::Keypoint>>& predicted,
              const std::vector<std::vector<Point>>& ground_truth, const std::vector<std::vector<bool>>& visible,
              std::int64_t h, std::int64_t w, double alpha = 0.1);

struct LossTerm {
  std::string name;
  double weight = 0.0;
  double value = 0.0;
};

struct LossReport {
  Var total;
  std::vector<LossTerm> terms;

  double total_value() const { return total.value().item(); }
  const LossTerm* find(std::string_view name) const;
};

struct LossInputs {
  Var student;                     // [B,J,H,W]
  const Tensor* ground_truth;      // [B,J,H,W]
  const Tensor* visibility;        // [B,J]
  const Tensor* teacher = nullptr;  // optional [B,J,H,W]
  const TokenBank* bank = nullptr;  // optional, with pooled features
  Var pooled;
};

LossReport total_loss(const Context& ctx, const LossInputs& inputs, const LossWeights& weights);

}  // namespace gapose::losses
