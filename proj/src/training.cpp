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

#include "gapose/training.hpp"

#include <algorithm>

#include "gapose/errors.hpp"

namespace gapose::training {

std::vector<std::size_t> batch_indices(std::int64_t n_samples, std::int64_t batch_size, std::int64_t step) {
  const std::int64_t bs = std::min(batch_size, n_samples);
  std::vector<std::size_t> idx;
  for (std::int64_t i = 0; i < bs; ++i) idx.push_back(static_cast<std::size_t>((step * bs + i) % n_samples));
  return idx;
}

FitResult fit(const ModelConfig& config, std::int64_t steps, const StepCallback& on_step) {
  if (steps < 0) throw ConfigError("steps: must be >= 0");
  FitResult r{std::make_unique<model::PoseModel>(config), model::Adam(model::AdamOptions{config.learning_rate}), {}};
  std::unique_ptr<model::PoseModel> teacher;
  if (!config.teacher_checkpoint.empty()) teacher = std::move(model::load_checkpoint(config.teacher_checkpoint).model);

  const std::vector<data::PoseSample> samples = data::generate_dataset(config);
  const bool full_batch = config.batch_size >= config.dataset.n_samples;
  const model::Batch everything = data::make_batch(samples);
  for (std::int64_t step = 0; step < steps; ++step) {
    model::StepReport rep;
    if (full_batch) {
      rep = model::train_step(*r.model, r.optimizer, everything, teacher.get());
    } else {
      std::vector<data::PoseSample> chunk;
      for (std::size_t i : batch_indices(config.dataset.n_samples, config.batch_size, step)) chunk.push_back(samples[i]);
      rep = model::train_step(*r.model, r.optimizer, data::make_batch(chunk), teacher.get());
    }
    r.history.push_back(rep);
    if (on_step) on_step(step + 1, rep);
  }
  return r;
}

std::vector<std::vector<head::Keypoint>> predict_keypoints(const model::PoseModel& model, const Tensor& images) {
  return head::argmax_keypoints(model.predict(images));
}

Metrics evaluate(const model::PoseModel& model, const std::vector<data::PoseSample>& samples, double alpha) {
  Metrics m;
  m.n_samples = static_cast<std::int64_t>(samples.size());
  if (samples.empty()) {
    m.pck = losses::pck({}, {}, {}, 1, 1, alpha);
    return m;
  }
  const ModelConfig& cfg = model.config();
  std::vector<std::vector<head::Keypoint>> predicted;
  std::vector<std::vector<losses::Point>> truth;
  std::vector<std::vector<bool>> visible;
  double mse_sum = 0.0;
  const std::int64_t bs = std::max<std::int64_t>(1, cfg.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(bs)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(bs));
    const std::vector<data::PoseSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                              samples.begin() + static_cast<std::ptrdiff_t>(end));
    const model::Batch batch = data::make_batch(chunk);
    const Tensor heatmaps = model.predict(batch.images);
    for (const auto& kps : head::argmax_keypoints(heatmaps)) predicted.push_back(kps);
    autograd::Graph g(false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto b = static_cast<std::int64_t>(i);
      const autograd::Var pred = ops::slice(g.constant(heatmaps), 0, b, 1);
      const autograd::Var target = ops::slice(g.constant(batch.heatmaps), 0, b, 1);
      const Tensor vis = ops::slice(g.constant(batch.visibility), 0, b, 1).value();
      mse_sum += losses::mse_heatmap(pred, target, vis).value().item();
      std::vector<losses::Point> pts;
      for (const auto& p : chunk[i].keypoints) pts.push_back(data::to_heatmap(p));
      truth.push_back(std::move(pts));
      visible.push_back(chunk[i].visible);
    }
  }
  m.mse = mse_sum / static_cast<double>(samples.size());
  m.pck = losses::pck(predicted, truth, visible, cfg.heatmap_h(), cfg.heatmap_w(), alpha);
  return m;
}

}  // namespace gapose::training
