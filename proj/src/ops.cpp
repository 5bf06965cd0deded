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

#include "gapose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gapose/errors.hpp"
#include "gapose/kernels.hpp"

namespace gapose::ops {
namespace {

using autograd::Graph;
using kernels::Transpose;

Graph& graph_of(const Var& v) {
  if (!v.valid()) throw StateError("operation on an unbound Var");
  return v.graph();
}

std::size_t uz(std::int64_t v) { return static_cast<std::size_t>(v); }

int normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return a;
}

// outer x n x inner decomposition around one axis.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[uz(i)];
  r.n = s[uz(axis)];
  for (std::size_t i = uz(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;  // 0 along broadcast dims
};

std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i + off] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

BroadcastPlan make_plan(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.stride_a = aligned_strides(a, p.out);
  p.stride_b = aligned_strides(b, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t sa = p.stride_a[r - 1], sb = p.stride_b[r - 1];
  const std::int64_t total = numel(p.out);
  std::vector<std::int64_t> idx(r, 0);
  std::size_t o = 0;
  for (std::int64_t base = 0; base < total; base += inner) {
    std::int64_t ia = 0, ib = 0;
    for (std::size_t d = 0; d + 1 < r; ++d) {
      ia += idx[d] * p.stride_a[d];
      ib += idx[d] * p.stride_b[d];
    }
    for (std::int64_t j = 0; j < inner; ++j) f(o++, uz(ia + j * sa), uz(ib + j * sb));
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++idx[d] < p.out[d]) break;
      idx[d] = 0;
    }
  }
}

enum class BinOp { add, sub, mul, div };

double apply(BinOp op, double a, double b) {
  switch (op) {
    case BinOp::add:
      return a + b;
    case BinOp::sub:
      return a - b;
    case BinOp::mul:
      return a * b;
    case BinOp::div:
      return a / b;
  }
  return 0.0;
}

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::add:
      return "add";
    case BinOp::sub:
      return "sub";
    case BinOp::mul:
      return "mul";
    case BinOp::div:
      return "div";
  }
  return "?";
}

Var binary(BinOp op, const Var& a, const Var& b) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape() == bv.shape();
  BroadcastPlan plan = make_plan(av.shape(), bv.shape());
  Tensor out(plan.out);
  if (same && op == BinOp::add) {
    kernels::add(out.size(), av.data(), bv.data(), out.data());
  } else if (same && op == BinOp::mul) {
    kernels::mul(out.size(), av.data(), bv.data(), out.data());
  } else {
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = apply(op, av[ia], bv[ib]);
    });
  }
  return g.record(bin_name(op), std::move(out), {a, b},
                  [&g, a, b, op, plan = std::move(plan)](const Tensor&, const Tensor& gout) {
                    const Tensor& av = g.value(a);
                    const Tensor& bv = g.value(b);
                    Tensor* ga = g.grad_sink(a);
                    Tensor* gb = g.grad_sink(b);
                    if (ga != nullptr && op != BinOp::mul && op != BinOp::div && av.shape() == gout.shape()) {
                      kernels::axpy(gout.size(), 1.0, gout.data(), ga->data());
                      ga = nullptr;
                    }
                    if (gb != nullptr && op == BinOp::add && bv.shape() == gout.shape()) {
                      kernels::axpy(gout.size(), 1.0, gout.data(), gb->data());
                      gb = nullptr;
                    }
                    if (ga == nullptr && gb == nullptr) return;
                    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                      const double gv = gout[o];
                      switch (op) {
                        case BinOp::add:
                          if (ga) (*ga)[ia] += gv;
                          if (gb) (*gb)[ib] += gv;
                          break;
                        case BinOp::sub:
                          if (ga) (*ga)[ia] += gv;
                          if (gb) (*gb)[ib] -= gv;
                          break;
                        case BinOp::mul:
                          if (ga) (*ga)[ia] += gv * bv[ib];
                          if (gb) (*gb)[ib] += gv * av[ia];
                          break;
                        case BinOp::div:
                          if (ga) (*ga)[ia] += gv / bv[ib];
                          if (gb) (*gb)[ib] -= gv * av[ia] / (bv[ib] * bv[ib]);
                          break;
                      }
                    });
                  });
}

// Elementwise unary op given value and derivative (as a function of input and
// output).
template <class F, class D>
Var unary(const char* name, const Var& x, F f, D dfdx) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return g.record(name, std::move(out), {x}, [&g, x, dfdx](const Tensor& y, const Tensor& gout) {
    Tensor* gx = g.grad_sink(x);
    if (gx == nullptr) return;
    const Tensor& xv = g.value(x);
    for (std::size_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i] * dfdx(xv[i], y[i]);
  });
}

Tensor permute_tensor(const Tensor& in, const std::vector<int>& perm) {
  const std::size_t r = in.rank();
  Shape out_shape(r);
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in.shape()[i];
  std::vector<std::int64_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in.shape()[uz(perm[i])];
    src_stride[i] = in_strides[uz(perm[i])];
  }
  Tensor out(out_shape);
  if (r == 0) {
    out[0] = in[0];
    return out;
  }
  std::vector<std::int64_t> idx(r, 0);
  const std::int64_t inner = out_shape[r - 1];
  const std::int64_t inner_stride = src_stride[r - 1];
  std::size_t o = 0;
  for (std::int64_t base = 0; base < numel(out_shape); base += inner) {
    std::int64_t src = 0;
    for (std::size_t d = 0; d + 1 < r; ++d) src += idx[d] * src_stride[d];
    for (std::int64_t j = 0; j < inner; ++j) out[o++] = in[uz(src + j * inner_stride)];
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) { kernels::axpy(dst.size(), 1.0, src.data(), dst.data()); }

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Var add(const Var& a, const Var& b) { return binary(BinOp::add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(BinOp::sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(BinOp::mul, a, b); }
Var div(const Var& a, const Var& b) { return binary(BinOp::div, a, b); }

Var add(const Var& a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.values()) v = v + s;
  return g.record("add_scalar", std::move(out), {a}, [&g, a](const Tensor&, const Tensor& gout) {
    if (Tensor* ga = g.grad_sink(a)) accumulate(*ga, gout);
  });
}

Var mul(const Var& a, double s) {
  Graph& g = graph_of(a);
  Tensor out(a.shape());
  kernels::scale(out.size(), s, a.value().data(), out.data());
  return g.record("mul_scalar", std::move(out), {a}, [&g, a, s](const Tensor&, const Tensor& gout) {
    if (Tensor* ga = g.grad_sink(a)) kernels::axpy(ga->size(), s, gout.data(), ga->data());
  });
}

Var square(const Var& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  Graph& g = graph_of(x);
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  BroadcastPlan plan = make_plan(shape, x.shape());
  const Tensor& xv = x.value();
  Tensor out(shape);
  for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t ix) { out[o] = xv[ix]; });
  return g.record("broadcast_to", std::move(out), {x},
                  [&g, x, plan = std::move(plan)](const Tensor&, const Tensor& gout) {
                    Tensor* gx = g.grad_sink(x);
                    if (gx == nullptr) return;
                    for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t ix) { (*gx)[ix] += gout[o]; });
                  });
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul needs rank >= 2 operands");
  const std::int64_t m = sa[sa.size() - 2], k = sa.back();
  const std::int64_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw ShapeError("matmul inner dimensions differ: " + to_string(sa) + " x " + to_string(sb));
  const Shape lead_a(sa.begin(), sa.end() - 2);
  const Shape lead_b(sb.begin(), sb.end() - 2);
  const bool shared_b = lead_b.empty();
  if (!shared_b && lead_a != lead_b) throw ShapeError("matmul batch dims differ: " + to_string(sa) + " x " + to_string(sb));
  std::int64_t batch = 1;
  for (auto d : lead_a) batch *= d;
  Shape out_shape = lead_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::int64_t i = 0; i < batch; ++i) {
    const double* bp = bv.data() + (shared_b ? 0 : i * k * n);
    kernels::gemm(Transpose::no, Transpose::no, uz(m), uz(n), uz(k), av.data() + i * m * k, uz(k), bp, uz(n),
                  out.data() + i * m * n, uz(n), false);
  }
  return g.record("matmul", std::move(out), {a, b},
                  [&g, a, b, batch, m, n, k, shared_b](const Tensor&, const Tensor& gout) {
                    const Tensor& av = g.value(a);
                    const Tensor& bv = g.value(b);
                    Tensor* ga = g.grad_sink(a);
                    Tensor* gb = g.grad_sink(b);
                    for (std::int64_t i = 0; i < batch; ++i) {
                      const double* gp = gout.data() + i * m * n;
                      const std::int64_t boff = shared_b ? 0 : i * k * n;
                      if (ga) {
                        kernels::gemm(Transpose::no, Transpose::yes, uz(m), uz(k), uz(n), gp, uz(n),
                                      bv.data() + boff, uz(n), ga->data() + i * m * k, uz(k), true);
                      }
                      if (gb) {
                        kernels::gemm(Transpose::yes, Transpose::no, uz(k), uz(n), uz(m), av.data() + i * m * k,
                                      uz(k), gp, uz(n), gb->data() + boff, uz(n), true);
                      }
                    }
                  });
}

Var reshape(const Var& x, Shape shape) {
  Graph& g = graph_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {x}, [&g, x](const Tensor&, const Tensor& gout) {
    if (Tensor* gx = g.grad_sink(x)) kernels::axpy(gx->size(), 1.0, gout.data(), gx->data());
  });
}

Var permute(const Var& x, const std::vector<int>& perm) {
  Graph& g = graph_of(x);
  const std::size_t r = x.value().rank();
  if (perm.size() != r) throw ShapeError("permute: " + std::to_string(perm.size()) + " axes for rank " + std::to_string(r));
  std::vector<int> inverse(r, -1);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] < 0 || uz(perm[i]) >= r || inverse[uz(perm[i])] != -1) throw ShapeError("permute: invalid permutation");
    inverse[uz(perm[i])] = static_cast<int>(i);
  }
  Tensor out = permute_tensor(x.value(), perm);
  return g.record("permute", std::move(out), {x}, [&g, x, inverse](const Tensor&, const Tensor& gout) {
    if (Tensor* gx = g.grad_sink(x)) accumulate(*gx, permute_tensor(gout, inverse));
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Graph& g = graph_of(xs[0]);
  const Shape& first = xs[0].shape();
  const int ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[uz(ax)] = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != ax && s[d] != first[d]) {
        throw ShapeError("concat: " + to_string(s) + " vs " + to_string(first) + " off axis " + std::to_string(ax));
      }
    }
    out_shape[uz(ax)] += s[uz(ax)];
  }
  Tensor out(out_shape);
  const AxisSplit os = split_at(out_shape, ax);
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const Var& v : xs) {
    const AxisSplit is = split_at(v.shape(), ax);
    const Tensor& vv = v.value();
    for (std::int64_t o = 0; o < os.outer; ++o) {
      std::copy_n(vv.data() + o * is.n * is.inner, is.n * is.inner, out.data() + (o * os.n + offset) * os.inner);
    }
    offsets.push_back(offset);
    offset += is.n;
  }
  return g.record("concat", std::move(out), xs, [&g, xs, offsets, ax, os](const Tensor&, const Tensor& gout) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Tensor* gx = g.grad_sink(xs[i]);
      if (gx == nullptr) continue;
      const AxisSplit is = split_at(gx->shape(), ax);
      for (std::int64_t o = 0; o < os.outer; ++o) {
        kernels::axpy(uz(is.n * is.inner), 1.0, gout.data() + (o * os.n + offsets[i]) * os.inner,
                      gx->data() + o * is.n * is.inner);
      }
    }
  });
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  const int ax = normalize_axis(axis, s.size(), "slice");
  if (start < 0 || length < 1 || start + length > s[uz(ax)]) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " + to_string(s));
  }
  Shape out_shape = s;
  out_shape[uz(ax)] = length;
  const AxisSplit is = split_at(s, ax);
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for (std::int64_t o = 0; o < is.outer; ++o) {
    std::copy_n(xv.data() + (o * is.n + start) * is.inner, length * is.inner, out.data() + o * length * is.inner);
  }
  return g.record("slice", std::move(out), {x}, [&g, x, is, start, length](const Tensor&, const Tensor& gout) {
    Tensor* gx = g.grad_sink(x);
    if (gx == nullptr) return;
    for (std::int64_t o = 0; o < is.outer; ++o) {
      kernels::axpy(uz(length * is.inner), 1.0, gout.data() + o * length * is.inner,
                    gx->data() + (o * is.n + start) * is.inner);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const Conv2dOptions& opts) {
  Graph& g = graph_of(x);
  Tensor out = conv2d_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, opts);
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return g.record("conv2d", std::move(out), inputs, [&g, x, w, bias, opts](const Tensor&, const Tensor& gout) {
    if (Tensor* gx = g.grad_sink(x)) accumulate(*gx, conv2d_backward_data(gout, g.value(w), gx->shape(), opts));
    if (Tensor* gw = g.grad_sink(w)) accumulate(*gw, conv2d_backward_weight(gout, g.value(x), gw->shape(), opts));
    if (bias) {
      if (Tensor* gb = g.grad_sink(*bias)) {
        const std::int64_t batch = gout.shape()[0], ch = gout.shape()[1];
        const std::int64_t plane = gout.shape()[2] * gout.shape()[3];
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t c = 0; c < ch; ++c) {
            const double* p = gout.data() + (b * ch + c) * plane;
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) s += p[i];
            (*gb)[uz(c)] += s;
          }
        }
      }
    }
  });
}

Var deconv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const Deconv2dOptions& opts) {
  Graph& g = graph_of(x);
  const Shape out_shape = deconv_output_shape(x.shape(), w.shape(), opts);
  const Conv2dOptions conv_opts{opts.stride, opts.padding, 1};
  Tensor out = conv2d_backward_data(x.value(), w.value(), out_shape, conv_opts);
  if (bias) {
    const Tensor& bv = bias->value();
    if (bv.shape() != Shape{out_shape[1]}) throw ShapeError("deconv2d: bias " + to_string(bv.shape()));
    const std::int64_t plane = out_shape[2] * out_shape[3];
    for (std::int64_t b = 0; b < out_shape[0]; ++b) {
      for (std::int64_t c = 0; c < out_shape[1]; ++c) {
        double* p = out.data() + (b * out_shape[1] + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) p[i] = p[i] + bv[uz(c)];
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return g.record("deconv2d", std::move(out), inputs,
                  [&g, x, w, bias, conv_opts](const Tensor&, const Tensor& gout) {
                    if (Tensor* gx = g.grad_sink(x)) {
                      accumulate(*gx, conv2d_forward(gout, g.value(w), nullptr, conv_opts));
                    }
                    if (Tensor* gw = g.grad_sink(w)) {
                      // The deconv input plays the role of the conv output gradient.
                      accumulate(*gw, conv2d_backward_weight(g.value(x), gout, gw->shape(), conv_opts));
                    }
                    if (bias) {
                      if (Tensor* gb = g.grad_sink(*bias)) {
                        const std::int64_t batch = gout.shape()[0], ch = gout.shape()[1];
                        const std::int64_t plane = gout.shape()[2] * gout.shape()[3];
                        for (std::int64_t b = 0; b < batch; ++b) {
                          for (std::int64_t c = 0; c < ch; ++c) {
                            const double* p = gout.data() + (b * ch + c) * plane;
                            double s = 0.0;
                            for (std::int64_t i = 0; i < plane; ++i) s += p[i];
                            (*gb)[uz(c)] += s;
                          }
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Activations

Var softmax(const Var& x, int axis) {
  Graph& g = graph_of(x);
  const int ax = normalize_axis(axis, x.value().rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), ax);
  const Tensor& xv = x.value();
  Tensor out(x.shape());
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = uz(o * sp.n * sp.inner + in);
      double mx = xv[base];
      for (std::int64_t i = 1; i < sp.n; ++i) mx = std::max(mx, xv[base + uz(i * sp.inner)]);
      double total = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(xv[base + uz(i * sp.inner)] - mx);
        out[base + uz(i * sp.inner)] = e;
        total += e;
      }
      for (std::int64_t i = 0; i < sp.n; ++i) out[base + uz(i * sp.inner)] /= total;
    }
  }
  return g.record("softmax", std::move(out), {x}, [&g, x, sp](const Tensor& y, const Tensor& gout) {
    Tensor* gx = g.grad_sink(x);
    if (gx == nullptr) return;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = uz(o * sp.n * sp.inner + in);
        double dot = 0.0;
        for (std::int64_t i = 0; i < sp.n; ++i) dot += gout[base + uz(i * sp.inner)] * y[base + uz(i * sp.inner)];
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::size_t at = base + uz(i * sp.inner);
          (*gx)[at] += y[at] * (gout[at] - dot);
        }
      }
    }
  });
}

Var sigmoid(const Var& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& x) {
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + v * pdf;
      });
}

Var relu(const Var& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                const BatchNormOptions& opts) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("batchnorm2d expects [B,C,H,W], got " + to_string(s));
  const std::int64_t batch = s[0], ch = s[1], plane = s[2] * s[3];
  const Shape cs{ch};
  if (gamma.shape() != cs || beta.shape() != cs || running_mean.shape() != cs || running_var.shape() != cs) {
    throw ShapeError("batchnorm2d: channel parameters do not match " + std::to_string(ch) + " channels");
  }
  const double count = static_cast<double>(batch * plane);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor mean(cs), inv_std(cs);
  if (opts.training) {
    for (std::int64_t c = 0; c < ch; ++c) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* p = xv.data() + (b * ch + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / count;
      double var = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* p = xv.data() + (b * ch + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= count;
      mean[uz(c)] = mu;
      inv_std[uz(c)] = 1.0 / std::sqrt(var + opts.eps);
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      running_mean[uz(c)] = (1.0 - opts.momentum) * running_mean[uz(c)] + opts.momentum * mu;
      running_var[uz(c)] = (1.0 - opts.momentum) * running_var[uz(c)] + opts.momentum * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < ch; ++c) {
      mean[uz(c)] = running_mean[uz(c)];
      inv_std[uz(c)] = 1.0 / std::sqrt(running_var[uz(c)] + opts.eps);
    }
  }
  Tensor xhat(s), out(s);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const std::size_t base = uz((b * ch + c) * plane);
      for (std::int64_t i = 0; i < plane; ++i) {
        const double h = (xv[base + uz(i)] - mean[uz(c)]) * inv_std[uz(c)];
        xhat[base + uz(i)] = h;
        out[base + uz(i)] = gv[uz(c)] * h + bv[uz(c)];
      }
    }
  }
  const bool training = opts.training;
  return g.record(
      "batchnorm2d", std::move(out), {x, gamma, beta},
      [&g, x, gamma, beta, xhat = std::move(xhat), inv_std, batch, ch, plane, count, training](const Tensor&,
                                                                                              const Tensor& gout) {
        const Tensor& gv = g.value(gamma);
        Tensor* gx = g.grad_sink(x);
        Tensor* gg = g.grad_sink(gamma);
        Tensor* gb = g.grad_sink(beta);
        for (std::int64_t c = 0; c < ch; ++c) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::int64_t b = 0; b < batch; ++b) {
            const std::size_t base = uz((b * ch + c) * plane);
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_g += gout[base + uz(i)];
              sum_gh += gout[base + uz(i)] * xhat[base + uz(i)];
            }
          }
          if (gg) (*gg)[uz(c)] += sum_gh;
          if (gb) (*gb)[uz(c)] += sum_g;
          if (gx == nullptr) continue;
          const double scale = gv[uz(c)] * inv_std[uz(c)];
          const double mean_g = sum_g / count;
          const double mean_gh = sum_gh / count;
          for (std::int64_t b = 0; b < batch; ++b) {
            const std::size_t base = uz((b * ch + c) * plane);
            for (std::int64_t i = 0; i < plane; ++i) {
              const std::size_t at = base + uz(i);
              (*gx)[at] += training ? scale * (gout[at] - mean_g - xhat[at] * mean_gh) : scale * gout[at];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling and sampling

Var pool2d(const Var& x, PoolKind kind, int kernel) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("pool2d expects [B,C,H,W], got " + to_string(s));
  if (kernel < 1 || s[2] < kernel || s[3] < kernel) {
    throw ShapeError("pool2d: kernel " + std::to_string(kernel) + " too large for " + to_string(s));
  }
  const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::int64_t oh = h / kernel, ow = w / kernel;
  Tensor out(Shape{s[0], s[1], oh, ow});
  std::vector<std::size_t> argmax(kind == PoolKind::max ? out.size() : 0);
  const Tensor& xv = x.value();
  const double inv_area = 1.0 / static_cast<double>(kernel * kernel);
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = uz((p * oh + oy) * ow + ox);
        double acc = 0.0;
        std::size_t best = uz((p * h + oy * kernel) * w + ox * kernel);
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const std::size_t at = uz((p * h + oy * kernel + ky) * w + ox * kernel + kx);
            acc += xv[at];
            if (xv[at] > xv[best]) best = at;
          }
        }
        if (kind == PoolKind::avg) {
          out[o] = acc * inv_area;
        } else {
          out[o] = xv[best];
          argmax[o] = best;
        }
      }
    }
  }
  return g.record("pool2d", std::move(out), {x},
                  [&g, x, kind, kernel, planes, h, w, oh, ow, inv_area, argmax = std::move(argmax)](
                      const Tensor&, const Tensor& gout) {
                    Tensor* gx = g.grad_sink(x);
                    if (gx == nullptr) return;
                    for (std::int64_t p = 0; p < planes; ++p) {
                      for (std::int64_t oy = 0; oy < oh; ++oy) {
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                          const std::size_t o = uz((p * oh + oy) * ow + ox);
                          if (kind == PoolKind::max) {
                            (*gx)[argmax[o]] += gout[o];
                            continue;
                          }
                          for (int ky = 0; ky < kernel; ++ky) {
                            for (int kx = 0; kx < kernel; ++kx) {
                              (*gx)[uz((p * h + oy * kernel + ky) * w + ox * kernel + kx)] += gout[o] * inv_area;
                            }
                          }
                        }
                      }
                    }
                  });
}

Var adaptive_avg_pool2d(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("adaptive_avg_pool2d expects [B,C,H,W], got " + to_string(s));
  if (out_h < 1 || out_w < 1 || out_h > s[2] || out_w > s[3]) {
    throw ShapeError("adaptive_avg_pool2d: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " not within input " + to_string(s));
  }
  const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3];
  auto lo = [](std::int64_t i, std::int64_t in, std::int64_t outn) { return (i * in) / outn; };
  auto hi = [](std::int64_t i, std::int64_t in, std::int64_t outn) { return ((i + 1) * in + outn - 1) / outn; };
  Tensor out(Shape{s[0], s[1], out_h, out_w});
  const Tensor& xv = x.value();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const std::int64_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const std::int64_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
        double acc = 0.0;
        for (std::int64_t yy = y0; yy < y1; ++yy) {
          for (std::int64_t xx = x0; xx < x1; ++xx) acc += xv[uz((p * h + yy) * w + xx)];
        }
        out[uz((p * out_h + oy) * out_w + ox)] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return g.record("adaptive_avg_pool2d", std::move(out), {x},
                  [&g, x, planes, h, w, out_h, out_w, lo, hi](const Tensor&, const Tensor& gout) {
                    Tensor* gx = g.grad_sink(x);
                    if (gx == nullptr) return;
                    for (std::int64_t p = 0; p < planes; ++p) {
                      for (std::int64_t oy = 0; oy < out_h; ++oy) {
                        const std::int64_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
                        for (std::int64_t ox = 0; ox < out_w; ++ox) {
                          const std::int64_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
                          const double share = gout[uz((p * out_h + oy) * out_w + ox)] /
                                               static_cast<double>((y1 - y0) * (x1 - x0));
                          for (std::int64_t yy = y0; yy < y1; ++yy) {
                            for (std::int64_t xx = x0; xx < x1; ++xx) (*gx)[uz((p * h + yy) * w + xx)] += share;
                          }
                        }
                      }
                    }
                  });
}

Var grid_sample_bilinear(const Var& x, const Var& coords) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  const Shape& cs = coords.shape();
  if (s.size() != 4 || cs.size() != 4 || cs[0] != s[0] || cs[3] != 2) {
    throw ShapeError("grid_sample_bilinear: input " + to_string(s) + " coords " + to_string(cs));
  }
  const std::int64_t batch = s[0], ch = s[1], h = s[2], w = s[3];
  const std::int64_t oh = cs[1], ow = cs[2];
  const Tensor& xv = x.value();
  const Tensor& cv = coords.value();
  Tensor out(Shape{batch, ch, oh, ow});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::size_t ci = uz(((b * oh + oy) * ow + ox) * 2);
        const double px = std::clamp(cv[ci], 0.0, static_cast<double>(w - 1));
        const double py = std::clamp(cv[ci + 1], 0.0, static_cast<double>(h - 1));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(px));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(py));
        const std::int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double wx = px - static_cast<double>(x0), wy = py - static_cast<double>(y0);
        for (std::int64_t c = 0; c < ch; ++c) {
          const double* plane = xv.data() + (b * ch + c) * h * w;
          const double top = (1.0 - wx) * plane[y0 * w + x0] + wx * plane[y0 * w + x1];
          const double bottom = (1.0 - wx) * plane[y1 * w + x0] + wx * plane[y1 * w + x1];
          out[uz(((b * ch + c) * oh + oy) * ow + ox)] = (1.0 - wy) * top + wy * bottom;
        }
      }
    }
  }
  return g.record("grid_sample_bilinear", std::move(out), {x, coords},
                  [&g, x, coords, batch, ch, h, w, oh, ow](const Tensor&, const Tensor& gout) {
                    const Tensor& xv = g.value(x);
                    const Tensor& cv = g.value(coords);
                    Tensor* gx = g.grad_sink(x);
                    Tensor* gc = g.grad_sink(coords);
                    for (std::int64_t b = 0; b < batch; ++b) {
                      for (std::int64_t oy = 0; oy < oh; ++oy) {
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                          const std::size_t ci = uz(((b * oh + oy) * ow + ox) * 2);
                          const double rx = cv[ci], ry = cv[ci + 1];
                          const double px = std::clamp(rx, 0.0, static_cast<double>(w - 1));
                          const double py = std::clamp(ry, 0.0, static_cast<double>(h - 1));
                          const bool free_x = rx > 0.0 && rx < static_cast<double>(w - 1);
                          const bool free_y = ry > 0.0 && ry < static_cast<double>(h - 1);
                          const std::int64_t x0 = static_cast<std::int64_t>(std::floor(px));
                          const std::int64_t y0 = static_cast<std::int64_t>(std::floor(py));
                          const std::int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                          const double wx = px - static_cast<double>(x0), wy = py - static_cast<double>(y0);
                          double dcx = 0.0, dcy = 0.0;
                          for (std::int64_t c = 0; c < ch; ++c) {
                            const std::size_t pbase = uz((b * ch + c) * h * w);
                            const double gv = gout[uz(((b * ch + c) * oh + oy) * ow + ox)];
                            const double v00 = xv[pbase + uz(y0 * w + x0)], v01 = xv[pbase + uz(y0 * w + x1)];
                            const double v10 = xv[pbase + uz(y1 * w + x0)], v11 = xv[pbase + uz(y1 * w + x1)];
                            if (gx) {
                              (*gx)[pbase + uz(y0 * w + x0)] += gv * (1.0 - wy) * (1.0 - wx);
                              (*gx)[pbase + uz(y0 * w + x1)] += gv * (1.0 - wy) * wx;
                              (*gx)[pbase + uz(y1 * w + x0)] += gv * wy * (1.0 - wx);
                              (*gx)[pbase + uz(y1 * w + x1)] += gv * wy * wx;
                            }
                            dcx += gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                            dcy += gv * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                          }
                          if (gc) {
                            if (free_x) (*gc)[ci] += dcx;
                            if (free_y) (*gc)[ci + 1] += dcy;
                          }
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& x) {
  Graph& g = graph_of(x);
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return g.record("sum", Tensor::scalar(acc), {x}, [&g, x](const Tensor&, const Tensor& gout) {
    Tensor* gx = g.grad_sink(x);
    if (gx == nullptr) return;
    const double gv = gout[0];
    for (double& v : gx->values()) v += gv;
  });
}

Var mean(const Var& x) { return mul(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_axis(const Var& x, int axis, bool keepdim) {
  Graph& g = graph_of(x);
  const int ax = normalize_axis(axis, x.value().rank(), "mean_axis");
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[uz(ax)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  const double inv = 1.0 / static_cast<double>(sp.n);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) acc += xv[uz((o * sp.n + i) * sp.inner + in)];
      out[uz(o * sp.inner + in)] = acc * inv;
    }
  }
  return g.record("mean_axis", std::move(out), {x}, [&g, x, sp, inv](const Tensor&, const Tensor& gout) {
    Tensor* gx = g.grad_sink(x);
    if (gx == nullptr) return;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const double gv = gout[uz(o * sp.inner + in)] * inv;
        for (std::int64_t i = 0; i < sp.n; ++i) (*gx)[uz((o * sp.n + i) * sp.inner + in)] += gv;
      }
    }
  });
}

Var max_axis(const Var& x, int axis, bool keepdim) {
  Graph& g = graph_of(x);
  const int ax = normalize_axis(axis, x.value().rank(), "max_axis");
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[uz(ax)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  const Tensor& xv = x.value();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      std::size_t best = uz(o * sp.n * sp.inner + in);
      for (std::int64_t i = 1; i < sp.n; ++i) {
        const std::size_t at = uz((o * sp.n + i) * sp.inner + in);
        if (xv[at] > xv[best]) best = at;
      }
      out[uz(o * sp.inner + in)] = xv[best];
      argmax[uz(o * sp.inner + in)] = best;
    }
  }
  return g.record("max_axis", std::move(out), {x},
                  [&g, x, argmax = std::move(argmax)](const Tensor&, const Tensor& gout) {
                    Tensor* gx = g.grad_sink(x);
                    if (gx == nullptr) return;
                    for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += gout[i];
                  });
}

}  // namespace gapose::ops
