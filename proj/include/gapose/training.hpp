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

// Training loop and dataset evaluation shared by the CLI and the tests.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "gapose/data.hpp"
#include "gapose/model.hpp"

namespace gapose::training {

struct FitResult {
  std::unique_ptr<model::PoseModel> model;
  model::Adam optimizer;
  std::vector<model::StepReport> history;
};

// Called after every step with the 1-based step number.
using StepCallback = std::function<void(std::int64_t step, const model::StepReport&)>;

// Builds a model from `config` and runs `steps` Adam steps over the
// synthetic dataset in fixed minibatch order.
// The teacher checkpoint named in the config, if any, is loaded and frozen.
FitResult fit(const ModelConfig& config, std::int64_t steps, const StepCallback& on_step = {});

// Batches of consecutive samples, batch_size at a time, wrapping around.
std::vector<std::size_t> batch_indices(std::int64_t n_samples, std::int64_t batch_size, std::int64_t step);

struct Metrics {
  losses::PckResult pck;
  double mse = 0.0;  // visibility-masked heatmap MSE, averaged over samples
  std::int64_t n_samples = 0;
};

// Eval-mode predictions over the samples.
Metrics evaluate(const model::PoseModel& model, const std::vector<data::PoseSample>& samples, double alpha = 0.1);

// Keypoints predicted for each sample, in heatmap pixels.
std::vector<std::vector<head::Keypoint>> predict_keypoints(const model::PoseModel& model, const Tensor& images);

}  // namespace gapose::training
