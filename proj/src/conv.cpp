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

#include "gapose/conv.hpp"

#include <vector>

#include "gapose/errors.hpp"
#include "gapose/kernels.hpp"

namespace gapose {
namespace {

using kernels::Transpose;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

// Patch matrix of one group of one image: rows (c, ky, kx), columns (oy, ox).
void im2col(const double* x, const ConvGeometry& g, std::int64_t channels, double* col) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    const double* xc = x + c * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) dst[ox] = 0.0;
            continue;
          }
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? xc[iy * g.in_w + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back into image layout.
void col2im(const double* col, const ConvGeometry& g, std::int64_t channels, double* x) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    double* xc = x + c * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.in_w) xc[iy * g.in_w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

void add_bias(const ConvGeometry& g, const Tensor* bias, double* out) {
  if (bias == nullptr) return;
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      double* o = out + (b * g.out_channels + co) * plane;
      const double bv = (*bias)[static_cast<std::size_t>(co)];
      for (std::int64_t p = 0; p < plane; ++p) o[p] = o[p] + bv;
    }
  }
}

void conv_direct(const Tensor& x, const Tensor& w, const ConvGeometry& g, double* out) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      const std::int64_t group = co / cout_g;
      const double* wk = w.data() + co * cin_g * g.kernel_h * g.kernel_w;
      for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0.0;
          for (std::int64_t cl = 0; cl < cin_g; ++cl) {
            const double* xc = x.data() + ((b * g.in_channels) + group * cin_g + cl) * g.in_h * g.in_w;
            for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
              const std::int64_t iy = oy * g.stride - g.padding + ky;
              for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                const std::int64_t ix = ox * g.stride - g.padding + kx;
                const bool inside = iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w;
                const double xv = inside ? xc[iy * g.in_w + ix] : 0.0;
                acc = acc + wk[(cl * g.kernel_h + ky) * g.kernel_w + kx] * xv;
              }
            }
          }
          out[((b * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
        }
      }
    }
  }
}

void conv_im2col(const Tensor& x, const Tensor& w, const ConvGeometry& g, double* out) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t kc = cin_g * g.kernel_h * g.kernel_w;
  const std::int64_t plane = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(g);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kc * plane));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const double* xg = x.data() + (b * g.in_channels + grp * cin_g) * g.in_h * g.in_w;
      const double* patches = xg;
      if (!pointwise) {
        im2col(xg, g, cin_g, col.data());
        patches = col.data();
      }
      const double* wg = w.data() + grp * cout_g * kc;
      double* og = out + (b * g.out_channels + grp * cout_g) * plane;
      kernels::gemm(Transpose::no, Transpose::no, static_cast<std::size_t>(cout_g), static_cast<std::size_t>(plane),
                    static_cast<std::size_t>(kc), wg, static_cast<std::size_t>(kc), patches,
                    static_cast<std::size_t>(plane), og, static_cast<std::size_t>(plane), false);
    }
  }
}

}  // namespace

ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Conv2dOptions& opts) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got " + to_string(x) + " and " + to_string(w));
  }
  if (opts.stride < 1 || opts.padding < 0 || opts.groups < 1) throw ShapeError("conv2d: invalid stride/padding/groups");
  ConvGeometry g{};
  g.batch = x[0];
  g.in_channels = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_channels = w[0];
  g.kernel_h = w[2];
  g.kernel_w = w[3];
  g.stride = opts.stride;
  g.padding = opts.padding;
  g.groups = opts.groups;
  if (g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(g.in_channels) + "->" + std::to_string(g.out_channels) +
                     " not divisible by groups " + std::to_string(g.groups));
  }
  if (w[1] != g.in_channels / g.groups) {
    throw ShapeError("conv2d: weight " + to_string(w) + " does not match input " + to_string(x));
  }
  const std::int64_t span_h = g.in_h + 2 * g.padding - g.kernel_h;
  const std::int64_t span_w = g.in_w + 2 * g.padding - g.kernel_w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: non-positive output size for input " + to_string(x) + " kernel " + to_string(w));
  }
  g.out_h = span_h / g.stride + 1;
  g.out_w = span_w / g.stride + 1;
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& opts,
                      ConvAlgorithm algo) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), opts);
  if (bias != nullptr && bias->shape() != Shape{g.out_channels}) {
    throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " for " + std::to_string(g.out_channels) +
                     " output channels");
  }
  Tensor out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  if (algo == ConvAlgorithm::direct) {
    conv_direct(x, w, g, out.data());
  } else {
    conv_im2col(x, w, g, out.data());
  }
  add_bias(g, bias, out.data());
  return out;
}

Tensor conv2d_backward_data(const Tensor& dy, const Tensor& w, const Shape& x_shape, const Conv2dOptions& opts) {
  const ConvGeometry g = conv_geometry(x_shape, w.shape(), opts);
  if (dy.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d backward: gradient " + to_string(dy.shape()) + " does not match output geometry");
  }
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t kc = cin_g * g.kernel_h * g.kernel_w;
  const std::int64_t plane = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(g);
  Tensor dx(x_shape);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kc * plane));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const double* dyg = dy.data() + (b * g.out_channels + grp * cout_g) * plane;
      const double* wg = w.data() + grp * cout_g * kc;
      double* dxg = dx.data() + (b * g.in_channels + grp * cin_g) * g.in_h * g.in_w;
      double* dst = pointwise ? dxg : col.data();
      kernels::gemm(Transpose::yes, Transpose::no, static_cast<std::size_t>(kc), static_cast<std::size_t>(plane),
                    static_cast<std::size_t>(cout_g), wg, static_cast<std::size_t>(kc), dyg,
                    static_cast<std::size_t>(plane), dst, static_cast<std::size_t>(plane), false);
      if (!pointwise) col2im(col.data(), g, cin_g, dxg);
    }
  }
  return dx;
}

Tensor conv2d_backward_weight(const Tensor& dy, const Tensor& x, const Shape& w_shape, const Conv2dOptions& opts) {
  const ConvGeometry g = conv_geometry(x.shape(), w_shape, opts);
  if (dy.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d backward: gradient " + to_string(dy.shape()) + " does not match output geometry");
  }
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t kc = cin_g * g.kernel_h * g.kernel_w;
  const std::int64_t plane = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(g);
  Tensor dw(w_shape);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kc * plane));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const double* xg = x.data() + (b * g.in_channels + grp * cin_g) * g.in_h * g.in_w;
      const double* patches = xg;
      if (!pointwise) {
        im2col(xg, g, cin_g, col.data());
        patches = col.data();
      }
      const double* dyg = dy.data() + (b * g.out_channels + grp * cout_g) * plane;
      double* dwg = dw.data() + grp * cout_g * kc;
      kernels::gemm(Transpose::no, Transpose::yes, static_cast<std::size_t>(cout_g), static_cast<std::size_t>(kc),
                    static_cast<std::size_t>(plane), dyg, static_cast<std::size_t>(plane), patches,
                    static_cast<std::size_t>(plane), dwg, static_cast<std::size_t>(kc), true);
    }
  }
  return dw;
}

Shape deconv_output_shape(const Shape& x, const Shape& w, const Deconv2dOptions& opts) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError("deconv2d expects 4-d input and weight, got " + to_string(x) + " and " + to_string(w));
  }
  if (w[0] != x[1]) throw ShapeError("deconv2d: weight " + to_string(w) + " does not match input " + to_string(x));
  if (opts.stride < 1 || opts.padding < 0) throw ShapeError("deconv2d: invalid stride/padding");
  const std::int64_t h = (x[2] - 1) * opts.stride - 2 * opts.padding + w[2];
  const std::int64_t wd = (x[3] - 1) * opts.stride - 2 * opts.padding + w[3];
  if (h < 1 || wd < 1) throw ShapeError("deconv2d: non-positive output size for input " + to_string(x));
  return Shape{x[0], w[1], h, wd};
}

}  // namespace gapose
