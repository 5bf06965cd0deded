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

#include "gapose/losses.hpp"

#include <cmath>
#include <limits>

#include "gapose/errors.hpp"

namespace gapose::losses {

Var mse_heatmap(const Var& a, const Var& b, const Tensor& visibility) {
  const Shape& s = a.shape();
  if (s != b.shape()) throw ShapeError("mse_heatmap: " + to_string(s) + " vs " + to_string(b.shape()));
  if (s.size() != 4) throw ShapeError("mse_heatmap: expected [B,J,H,W], got " + to_string(s));
  if (visibility.shape() != Shape{s[0], s[1]}) {
    throw ShapeError("mse_heatmap: visibility " + to_string(visibility.shape()) + " for heatmap " + to_string(s));
  }
  double visible = 0.0;
  for (double v : visibility.values()) visible += v != 0.0 ? 1.0 : 0.0;
  autograd::Graph& g = a.graph();
  if (visible == 0.0) return g.constant(Tensor::scalar(0.0));
  Tensor mask(Shape{s[0], s[1], 1, 1});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = visibility[i] != 0.0 ? 1.0 : 0.0;
  const Var sq = ops::square(ops::sub(a, b));
  const Var masked = ops::mul(sq, g.constant(std::move(mask)));
  return ops::mul(ops::sum(masked), 1.0 / (visible * static_cast<double>(s[2] * s[3])));
}

Var mse_heatmap(const Var& a, const Var& b) {
  if (a.value().rank() != 4) throw ShapeError("mse_heatmap: expected [B,J,H,W], got " + to_string(a.shape()));
  return mse_heatmap(a, b, Tensor::full(Shape{a.dim(0), a.dim(1)}, 1.0));
}

Var output_distillation(const Var& student, const Tensor& teacher) {
  return mse_heatmap(student, student.graph().constant(teacher));
}

TokenBank::TokenBank(const nn::Initializer& init, std::int64_t tokens, std::int64_t token_dim,
                     std::int64_t feature_dim, std::int64_t joints, std::int64_t heatmap_h, std::int64_t heatmap_w)
    : joints_(joints), heatmap_h_(heatmap_h), heatmap_w_(heatmap_w) {
  if (tokens < 1) throw ConfigError("token_count: must be >= 1");
  tokens_ = &init.param("tokens", Shape{tokens, token_dim}, nn::Init::fan_in_uniform, 1);
  head_ = nn::Linear(init, "head", token_dim + feature_dim, joints * heatmap_h * heatmap_w);
}

Var TokenBank::predict(const Context& ctx, std::size_t token, const Var& pooled) const {
  const std::int64_t batch = pooled.dim(0);
  const std::int64_t dim = tokens_->value.dim(1);
  const Var t = ops::slice(ctx.param(*tokens_), 0, static_cast<std::int64_t>(token), 1);
  const Var input = ops::concat({ops::broadcast_to(t, {batch, dim}), pooled}, 1);
  return ops::reshape(head_.forward(ctx, input), {batch, joints_, heatmap_h_, heatmap_w_});
}

TokenSelection token_distillation(const Context& ctx, const TokenBank& bank, const Var& pooled,
                                  const Tensor& ground_truth) {
  TokenSelection out;
  const Var target = ctx.graph.constant(ground_truth);
  std::vector<Var> losses;
  for (std::int64_t i = 0; i < bank.size(); ++i) {
    losses.push_back(mse_heatmap(bank.predict(ctx, static_cast<std::size_t>(i), pooled), target));
    out.per_token.push_back(losses.back().value().item());
    if (out.per_token.back() < out.per_token[out.index]) out.index = static_cast<std::size_t>(i);
  }
  out.loss = losses[out.index];
  return out;
}

RenderedTargets render_gaussian_targets(const std::vector<Point>& keypoints, const std::vector<bool>& visible,
                                        std::int64_t h, std::int64_t w, double sigma) {
  if (keypoints.size() != visible.size()) throw ShapeError("render_gaussian_targets: keypoint/visibility mismatch");
  const auto joints = static_cast<std::int64_t>(keypoints.size());
  RenderedTargets out{Tensor::zeros(Shape{joints, h, w}), visible};
  const double radius = 3.0 * sigma;
  for (std::int64_t j = 0; j < joints; ++j) {
    const Point p = keypoints[static_cast<std::size_t>(j)];
    const bool inside = p.x >= 0.0 && p.x <= static_cast<double>(w - 1) && p.y >= 0.0 &&
                        p.y <= static_cast<double>(h - 1);
    if (!inside) out.visible[static_cast<std::size_t>(j)] = false;
    if (!out.visible[static_cast<std::size_t>(j)]) continue;
    const auto x0 = static_cast<std::int64_t>(std::max(0.0, std::ceil(p.x - radius)));
    const auto x1 = static_cast<std::int64_t>(std::min(static_cast<double>(w - 1), std::floor(p.x + radius)));
    const auto y0 = static_cast<std::int64_t>(std::max(0.0, std::ceil(p.y - radius)));
    const auto y1 = static_cast<std::int64_t>(std::min(static_cast<double>(h - 1), std::floor(p.y + radius)));
    double* plane = out.heatmaps.data() + j * h * w;
    for (std::int64_t y = y0; y <= y1; ++y) {
      for (std::int64_t x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - p.x, dy = static_cast<double>(y) - p.y;
        plane[y * w + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
    }
  }
  return out;
}

PckResult pck(const std::vector<std::vector<head::Keypoint>>& predicted,
              const std::vector<std::vector<Point>>& ground_truth, const std::vector<std::vector<bool>>& visible,
              std::int64_t h, std::int64_t w, double alpha) {
  if (predicted.size() != ground_truth.size() || predicted.size() != visible.size()) {
    throw ShapeError("pck: sample counts differ");
  }
  const double threshold = alpha * std::sqrt(static_cast<double>(h * h + w * w));
  PckResult r;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    if (predicted[s].size() != ground_truth[s].size() || visible[s].size() != ground_truth[s].size()) {
      throw ShapeError("pck: joint counts differ in sample " + std::to_string(s));
    }
    for (std::size_t j = 0; j < predicted[s].size(); ++j) {
      if (!visible[s][j]) continue;
      ++r.count;
      const double dist = std::hypot(predicted[s][j].x - ground_truth[s][j].x, predicted[s][j].y - ground_truth[s][j].y);
      if (dist <= threshold) ++r.correct;
    }
  }
  r.value = r.count == 0 ? std::numeric_limits<double>::quiet_NaN()
                         : static_cast<double>(r.correct) / static_cast<double>(r.count);
  return r;
}

const LossTerm* LossReport::find(std::string_view name) const {
  for (const auto& t : terms) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

LossReport total_loss(const Context& ctx, const LossInputs& in, const LossWeights& weights) {
  LossReport report;
  const Var gt = mse_heatmap(in.student, ctx.graph.constant(*in.ground_truth), *in.visibility);
  report.terms.push_back({"gt_mse", weights.gt, gt.value().item()});
  Var total = ops::mul(gt, weights.gt);
  if (in.teacher) {
    const Var od = output_distillation(in.student, *in.teacher);
    report.terms.push_back({"output_distill", weights.output_distill, od.value().item()});
    total = ops::add(total, ops::mul(od, weights.output_distill));
  }
  if (in.bank) {
    const TokenSelection td = token_distillation(ctx, *in.bank, in.pooled, *in.ground_truth);
    report.terms.push_back({"token_distill", weights.token_distill, td.loss.value().item()});
    total = ops::add(total, ops::mul(td.loss, weights.token_distill));
  }
  report.total = total;
  return report;
}

}  // namespace gapose::losses
