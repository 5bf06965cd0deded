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

// Tensor-level 2D convolution kernels (no graph). Cross-correlation
// semantics, NCHW activations, OIHW weights.

#pragma once

#include <cstdint>

#include "gapose/tensor.hpp"

namespace gapose {

enum class ConvAlgorithm {
  // Six nested loops, one accumulator per output.
  direct,
  // Patch matrix times weight matrix through kernels::gemm.
  im2col,
};

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

struct Deconv2dOptions {
  int stride = 1;
  int padding = 0;
};

struct ConvGeometry {
  std::int64_t batch, in_channels, in_h, in_w;
  std::int64_t out_channels, kernel_h, kernel_w;
  std::int64_t out_h, out_w;
  int stride, padding, groups;
};

// Validates shapes; throws ShapeError on group mismatch or empty output.
ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Conv2dOptions& opts);

// Both algorithms accumulate every output in (in_channel, ky, kx) order
// starting from zero and add the bias last, so they agree exactly.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& opts,
                      ConvAlgorithm algo = ConvAlgorithm::im2col);
// Adjoint of conv2d_forward in x: maps dy [B,Co,Ho,Wo] to [B,C,H,W] = x_shape.
Tensor conv2d_backward_data(const Tensor& dy, const Tensor& w, const Shape& x_shape, const Conv2dOptions& opts);
// d(loss)/dw given dy and the forward input.
Tensor conv2d_backward_weight(const Tensor& dy, const Tensor& x, const Shape& w_shape, const Conv2dOptions& opts);

Shape deconv_output_shape(const Shape& x, const Shape& w, const Deconv2dOptions& opts);

}  // namespace gapose
