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

// Differentiable operations over autograd::Var. Each op computes its value
// eagerly and records a backward closure on the graph of its inputs.

#pragma once

#include <optional>
#include <vector>

#include "gapose/autograd.hpp"
#include "gapose/conv.hpp"

namespace gapose::ops {

using autograd::Var;

// Elementwise arithmetic with numpy-style broadcasting: shapes are aligned on
// the right and dimensions of size 1 (or missing leading ones) broadcast.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var mul(const Var& a, double b);
Var square(const Var& x);
Var broadcast_to(const Var& x, const Shape& shape);
Shape broadcast_shape(const Shape& a, const Shape& b);

// [..., M, K] x [..., K, N] -> [..., M, N]. Leading dims must match, or `b`
// may be a plain [K, N] matrix shared across the batch.
Var matmul(const Var& a, const Var& b);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<int>& perm);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length);

// x [B,C,H,W], w [Co, C/groups, kh, kw], bias [Co].
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const Conv2dOptions& opts = {});
// x [B,Ci,H,W], w [Ci, Co, kh, kw], bias [Co]; output (H-1)s - 2p + kh.
Var deconv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const Deconv2dOptions& opts = {});

// Stabilized by subtracting the slice maximum.
Var softmax(const Var& x, int axis);
Var sigmoid(const Var& x);
// Exact (erf) form.
Var gelu(const Var& x);
Var relu(const Var& x);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization of [B,C,H,W]. In training mode the batch
// statistics are used and the running statistics updated in place.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                const BatchNormOptions& opts);

enum class PoolKind { avg, max };

// Non-overlapping k x k windows (stride k), output floor(H/k) x floor(W/k).
Var pool2d(const Var& x, PoolKind kind, int kernel);
// Bin i covers [floor(i*H/Ht), ceil((i+1)*H/Ht)).
Var adaptive_avg_pool2d(const Var& x, std::int64_t out_h, std::int64_t out_w);

// x [B,C,H,W], coords [B,Ho,Wo,2] holding (x, y) in input pixel units.
// Coordinates are clamped to the border; out-of-range samples carry no
// coordinate gradient along the clamped axis.
Var grid_sample_bilinear(const Var& x, const Var& coords);

Var sum(const Var& x);
Var mean(const Var& x);
Var mean_axis(const Var& x, int axis, bool keepdim = true);
// Ties resolve to the lowest index, which also receives the gradient.
Var max_axis(const Var& x, int axis, bool keepdim = true);

}  // namespace gapose::ops
