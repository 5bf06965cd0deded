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

#include <cmath>
#include <limits>

#include "doctest.h"
#include "gapose/errors.hpp"
#include "gapose/ops.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gapose;
using namespace gapose::testing;

namespace {

Tensor values(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v)); }

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and element count agree") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.dim(-1) == 4);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.at({2, 0, 0}), ShapeError);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
  }

  TEST_CASE("add of two vectors") {
    Graph g;
    const Var y = ops::add(g.constant(values({2}, {1, 2})), g.constant(values({2}, {3, 4})));
    CHECK(y.value()[0] == 4);
    CHECK(y.value()[1] == 6);
  }

  TEST_CASE("multiplying by one is exact") {
    Rng rng(1);
    Graph g;
    const Tensor x = random_tensor(rng, {3, 5});
    CHECK(equal_values(ops::mul(g.constant(x), 1.0).value(), x));
  }

  TEST_CASE("incompatible shapes are rejected") {
    Graph g;
    CHECK_THROWS_AS(ops::add(g.constant(Tensor({2, 3})), g.constant(Tensor({4}))), ShapeError);
    CHECK_THROWS_AS(ops::matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({4, 2}))), ShapeError);
  }

  TEST_CASE("elementwise gradients match central differences") {
    Rng rng(2);
    const Tensor a = random_tensor(rng, {2, 3});
    const Tensor b = random_tensor(rng, {2, 3}, 0.5, 1.5);
    const Tensor row = random_tensor(rng, {1, 3}, 0.5, 1.5);
    auto op = [](int kind) {
      return [kind](Graph& g, const std::vector<Var>& v) {
        Var y;
        switch (kind) {
          case 0: y = ops::add(v[0], v[1]); break;
          case 1: y = ops::sub(v[0], v[1]); break;
          case 2: y = ops::mul(v[0], v[1]); break;
          default: y = ops::div(v[0], v[1]); break;
        }
        return random_projection(g, y);
      };
    };
    for (int k = 0; k < 4; ++k) {
      CAPTURE(k);
      CHECK(gradient_error(op(k), {a, b}) <= 1e-6);
      CHECK(gradient_error(op(k), {a, row}) <= 1e-6);
    }
  }

  TEST_CASE("broadcast add and mul agree with a loop oracle on random shapes") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const auto rank = random_int(rng, 1, 4);
      Shape out, sa, sb;
      for (std::int64_t d = 0; d < rank; ++d) out.push_back(random_int(rng, 1, 4));
      // Each operand drops leading dims and broadcasts some of the rest.
      const auto drop_a = random_int(rng, 0, rank - 1), drop_b = random_int(rng, 0, rank - 1);
      for (std::int64_t d = drop_a; d < rank; ++d) sa.push_back(rng.uniform() < 0.3 ? 1 : out[static_cast<std::size_t>(d)]);
      for (std::int64_t d = drop_b; d < rank; ++d) sb.push_back(rng.uniform() < 0.3 ? 1 : out[static_cast<std::size_t>(d)]);
      const Tensor a = random_tensor(rng, sa), b = random_tensor(rng, sb);
      Graph g;
      const Var sum = ops::add(g.constant(a), g.constant(b));
      const Var prod = ops::mul(g.constant(a), g.constant(b));
      const Shape full = ops::broadcast_shape(sa, sb);
      REQUIRE(sum.shape() == full);
      // Loop oracle: decompose every output index and map it to each operand.
      const auto n = numel(full);
      for (std::int64_t flat = 0; flat < n; ++flat) {
        std::vector<std::int64_t> idx(full.size());
        std::int64_t rem = flat;
        for (std::size_t d = full.size(); d-- > 0;) {
          idx[d] = rem % full[d];
          rem /= full[d];
        }
        auto pick = [&](const Tensor& t) {
          const Shape& s = t.shape();
          std::int64_t off = 0;
          for (std::size_t d = 0; d < s.size(); ++d) {
            const auto i = idx[d + full.size() - s.size()];
            off = off * s[d] + (s[d] == 1 ? 0 : i);
          }
          return t[static_cast<std::size_t>(off)];
        };
        REQUIRE(sum.value()[static_cast<std::size_t>(flat)] == pick(a) + pick(b));
        REQUIRE(prod.value()[static_cast<std::size_t>(flat)] == pick(a) * pick(b));
      }
    }
  }

  TEST_CASE("matmul examples") {
    Graph g;
    const Var eye = g.constant(values({2, 2}, {1, 0, 0, 1}));
    const Tensor m = values({2, 2}, {1, 2, 3, 4});
    CHECK(equal_values(ops::matmul(eye, g.constant(m)).value(), m));
    CHECK(ops::matmul(g.constant(values({1, 2}, {1, 2})), g.constant(values({2, 1}, {3, 4}))).value()[0] == 11);
  }

  TEST_CASE("matmul matches a triple loop exactly") {
    Rng rng(4);
    const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
    Graph g;
    const Tensor c = ops::matmul(g.constant(a), g.constant(b)).value();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
        CHECK(c.at({i, j}) == acc);
      }
  }

  TEST_CASE("batched matmul gradient") {
    Rng rng(5);
    const Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 4, 2}), shared = random_tensor(rng, {4, 2});
    auto f = [](Graph& g, const std::vector<Var>& v) { return random_projection(g, ops::matmul(v[0], v[1])); };
    CHECK(gradient_error(f, {a, b}) <= 1e-6);
    CHECK(gradient_error(f, {a, shared}) <= 1e-6);
  }

  TEST_CASE("conv2d examples") {
    Graph g;
    const Var ones = g.constant(Tensor::full({1, 1, 3, 3}, 1.0));
    CHECK(ops::conv2d(ones, g.constant(Tensor::full({1, 1, 3, 3}, 1.0)), std::nullopt).value().item() == 9.0);
    Rng rng(6);
    const Tensor x = random_tensor(rng, {1, 1, 4, 5});
    CHECK(equal_values(ops::conv2d(g.constant(x), g.constant(Tensor::full({1, 1, 1, 1}, 1.0)), std::nullopt).value(), x));
  }

  TEST_CASE("conv2d matches the six-loop oracle exactly, both algorithms") {
    Rng rng(7);
    struct Case { std::int64_t c, co; int k, stride, pad, groups; };
    const Case cases[] = {{3, 4, 3, 1, 0, 1}, {3, 4, 3, 2, 1, 1}, {4, 4, 3, 1, 1, 4}, {4, 6, 1, 1, 0, 2},
                          {2, 1, 7, 1, 3, 1}, {3, 2, 4, 4, 0, 1}, {4, 8, 1, 1, 0, 1}};
    for (const Case& cs : cases) {
      const Tensor x = random_tensor(rng, {2, cs.c, 5, 5 + cs.k % 2});
      const Tensor w = random_tensor(rng, {cs.co, cs.c / cs.groups, cs.k, cs.k});
      const Tensor bias = random_tensor(rng, {cs.co});
      const Conv2dOptions opts{cs.stride, cs.pad, cs.groups};
      const Tensor oracle = naive_conv(x, w, &bias, cs.stride, cs.pad, cs.groups);
      CHECK(equal_values(conv2d_forward(x, w, &bias, opts, ConvAlgorithm::direct), oracle));
      CHECK(equal_values(conv2d_forward(x, w, &bias, opts, ConvAlgorithm::im2col), oracle));
      CHECK(equal_values(conv2d_forward(x, w, nullptr, opts), naive_conv(x, w, nullptr, cs.stride, cs.pad, cs.groups)));
    }
  }

  TEST_CASE("conv2d rejects empty outputs and bad groups") {
    Graph g;
    CHECK_THROWS_AS(ops::conv2d(g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({1, 1, 3, 3})), std::nullopt),
                    ShapeError);
    CHECK_THROWS_AS(ops::conv2d(g.constant(Tensor({1, 3, 4, 4})), g.constant(Tensor({2, 1, 3, 3})), std::nullopt,
                                Conv2dOptions{1, 1, 2}),
                    ShapeError);
  }

  TEST_CASE("conv2d gradients") {
    Rng rng(8);
    const Tensor x = random_tensor(rng, {2, 4, 5, 4}), w = random_tensor(rng, {4, 2, 3, 3}), b = random_tensor(rng, {4});
    auto f = [](Graph& g, const std::vector<Var>& v) {
      return random_projection(g, ops::conv2d(v[0], v[1], v[2], Conv2dOptions{2, 1, 2}));
    };
    CHECK(gradient_error(f, {x, w, b}) <= 1e-6);
  }

  TEST_CASE("deconv2d single-pixel expansion and output shape") {
    Graph g;
    const Var y = ops::deconv2d(g.constant(Tensor::full({1, 1, 1, 1}, 1.0)), g.constant(Tensor::full({1, 1, 2, 2}, 1.0)),
                                std::nullopt, Deconv2dOptions{2, 0});
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.value().values()) CHECK(v == 1.0);
    CHECK(deconv_output_shape({1, 256, 16, 12}, {256, 128, 4, 4}, {2, 1}) == Shape{1, 128, 32, 24});
  }

  TEST_CASE("deconv2d matches the gather oracle exactly") {
    Rng rng(9);
    struct Case { std::int64_t ci, co; int k, stride, pad; };
    for (const Case cs : {Case{3, 2, 4, 2, 1}, Case{2, 3, 3, 1, 1}, Case{4, 1, 2, 2, 0}, Case{1, 2, 5, 3, 2}}) {
      const Tensor x = random_tensor(rng, {2, cs.ci, 4, 3}), w = random_tensor(rng, {cs.ci, cs.co, cs.k, cs.k});
      Graph g;
      const Tensor y =
          ops::deconv2d(g.constant(x), g.constant(w), std::nullopt, Deconv2dOptions{cs.stride, cs.pad}).value();
      CHECK(equal_values(y, naive_deconv(x, w, cs.stride, cs.pad)));
    }
  }

  TEST_CASE("deconv2d is the adjoint of conv2d") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
      const int stride = static_cast<int>(random_int(rng, 1, 3)), k = static_cast<int>(random_int(rng, 1, 4));
      const int pad = static_cast<int>(random_int(rng, 0, (k - 1) / 2 + 0));
      const auto ci = random_int(rng, 1, 3), co = random_int(rng, 1, 3);
      const Tensor x = random_tensor(rng, {2, ci, random_int(rng, 2, 4), random_int(rng, 2, 4)});
      const Tensor w = random_tensor(rng, {ci, co, k, k});
      Graph g;
      const Tensor dx = ops::deconv2d(g.constant(x), g.constant(w), std::nullopt, Deconv2dOptions{stride, pad}).value();
      const Tensor y = random_tensor(rng, dx.shape());
      // conv maps the deconv output space back with the same weights.
      const Tensor cy = conv2d_forward(y, w, nullptr, Conv2dOptions{stride, pad, 1});
      REQUIRE(cy.shape() == x.shape());
      const double lhs = dot(dx, y), rhs = dot(x, cy);
      CHECK(relative_error(lhs, rhs) <= 1e-10);
    }
  }

  TEST_CASE("adjointness of the remaining linear ops") {
    Rng rng(11);
    auto adjoint_error = [&](const std::function<Var(Graph&, const Var&)>& op, Shape in_shape) {
      const Tensor x = random_tensor(rng, in_shape);
      Graph g;
      const Var xv = g.variable(x);
      const Var y = op(g, xv);
      const Tensor r = random_tensor(rng, y.shape());
      g.backward(ops::sum(ops::mul(y, g.constant(r))));
      return relative_error(dot(y.value(), r), dot(x, g.grad(xv)));
    };
    CHECK(adjoint_error([](Graph&, const Var& x) { return ops::pool2d(x, ops::PoolKind::avg, 2); }, {2, 3, 4, 6}) <= 1e-10);
    CHECK(adjoint_error([](Graph&, const Var& x) { return ops::adaptive_avg_pool2d(x, 3, 2); }, {1, 2, 7, 5}) <= 1e-10);
    CHECK(adjoint_error([](Graph&, const Var& x) { return ops::permute(x, {2, 0, 1}); }, {2, 3, 4}) <= 1e-10);
    CHECK(adjoint_error([](Graph& g, const Var& x) { return ops::concat({x, ops::mul(x, 2.0), g.constant(Tensor({2, 1, 3}))}, 1); },
                        {2, 2, 3}) <= 1e-10);
    CHECK(adjoint_error([](Graph& g, const Var& x) {
            Rng r(3);
            return ops::conv2d(x, g.constant(random_tensor(r, {3, 2, 3, 3})), std::nullopt, Conv2dOptions{2, 1, 1});
          },
                        {2, 2, 5, 5}) <= 1e-10);
    CHECK(adjoint_error([](Graph& g, const Var& x) {
            Rng r(4);
            Tensor coords({1, 3, 4, 2});
            for (double& v : coords.values()) v = r.uniform(-0.5, 3.5);
            return ops::grid_sample_bilinear(x, g.constant(coords));
          },
                        {1, 2, 3, 4}) <= 1e-10);
  }

  TEST_CASE("activations") {
    Graph g;
    const Tensor s = ops::softmax(g.constant(Tensor({3})), 0).value();
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(ops::sigmoid(g.constant(Tensor::scalar(0.0))).value().item() == 0.5);
    CHECK(ops::relu(g.constant(values({3}, {-1, 0, 2}))).value()[2] == 2.0);
    CHECK(ops::gelu(g.constant(Tensor::scalar(0.0))).value().item() == 0.0);
    CHECK(ops::gelu(g.constant(Tensor::scalar(1.0))).value().item() == doctest::Approx(0.8413447460685429));
  }

  TEST_CASE("softmax rows form a probability simplex") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x = random_tensor(rng, {random_int(rng, 1, 4), random_int(rng, 1, 6), random_int(rng, 1, 5)}, -30, 30);
      const int axis = static_cast<int>(random_int(rng, 0, 2));
      Graph g;
      const Var pv = g.constant(ops::softmax(g.constant(x), axis).value());
      for (double v : pv.value().values()) REQUIRE((v >= 0.0 && v <= 1.0));
      const Tensor sums = ops::mul(ops::mean_axis(pv, axis), static_cast<double>(x.dim(axis))).value();
      for (double v : sums.values()) CHECK(std::abs(v - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("softmax, sigmoid, gelu and relu gradients") {
    Rng rng(13);
    const Tensor x = random_tensor(rng, {3, 4}, -2, 2);
    auto f = [](int kind) {
      return [kind](Graph& g, const std::vector<Var>& v) {
        switch (kind) {
          case 0: return random_projection(g, ops::softmax(v[0], 1));
          case 1: return random_projection(g, ops::softmax(v[0], 0));
          case 2: return random_projection(g, ops::sigmoid(v[0]));
          case 3: return random_projection(g, ops::gelu(v[0]));
          default: return random_projection(g, ops::relu(v[0]));
        }
      };
    };
    for (int k = 0; k < 5; ++k) {
      CAPTURE(k);
      CHECK(gradient_error(f(k), {x}) <= 1e-6);
    }
  }

  TEST_CASE("batchnorm training statistics") {
    Graph g;
    Tensor x({2, 2, 2, 2});
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < 4; ++i) {
        x[static_cast<std::size_t>((b * 2 + 0) * 4 + i)] = 3.0;
        x[static_cast<std::size_t>((b * 2 + 1) * 4 + i)] = -1.0;
      }
    Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
    const Tensor beta = values({2}, {0.25, -0.5});
    const Tensor y = ops::batchnorm2d(g.constant(x), g.constant(Tensor::full({2}, 1.0)), g.constant(beta), rm, rv, {})
                         .value();
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(y.at({b, 0, i / 2, i % 2}) == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(y.at({b, 1, i / 2, i % 2}) == doctest::Approx(-0.5).epsilon(1e-12));
      }
    // running = 0.9 * running + 0.1 * batch
    CHECK(rm[0] == doctest::Approx(0.3));
    CHECK(rv[0] == doctest::Approx(0.9));

    Rng rng(14);
    const Tensor r = random_tensor(rng, {3, 2, 4, 4}, -2, 5);
    const Tensor z = ops::batchnorm2d(g.constant(r), g.constant(Tensor::full({2}, 1.0)), g.constant(Tensor::zeros({2})), rm,
                                      rv, {})
                         .value();
    for (std::int64_t c = 0; c < 2; ++c) {
      double mean = 0.0, sq = 0.0;
      for (std::int64_t b = 0; b < 3; ++b)
        for (std::int64_t i = 0; i < 16; ++i) {
          const double v = z.at({b, c, i / 4, i % 4});
          mean += v / 48.0;
          sq += v * v / 48.0;
        }
      CHECK(std::abs(mean) <= 1e-12);
      CHECK(sq - mean * mean == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK_THROWS_AS(ops::batchnorm2d(g.constant(r), g.constant(Tensor({3})), g.constant(Tensor({3})), rm, rv, {}),
                    ShapeError);
  }

  TEST_CASE("batchnorm gradients in both modes") {
    Rng rng(15);
    const Tensor x = random_tensor(rng, {3, 2, 3, 2}), gamma = random_tensor(rng, {2}, 0.5, 1.5),
                 beta = random_tensor(rng, {2});
    for (bool training : {true, false}) {
      CAPTURE(training);
      auto f = [training](Graph& g, const std::vector<Var>& v) {
        Tensor rm = Tensor::full({2}, 0.1), rv = Tensor::full({2}, 0.7);
        ops::BatchNormOptions o;
        o.training = training;
        return random_projection(g, ops::batchnorm2d(v[0], v[1], v[2], rm, rv, o));
      };
      CHECK(gradient_error(f, {x, gamma, beta}) <= 1e-5);
    }
  }

  TEST_CASE("pooling examples") {
    Graph g;
    const Tensor c = ops::adaptive_avg_pool2d(g.constant(Tensor::full({1, 1, 5, 3}, 2.5)), 2, 2).value();
    for (double v : c.values()) CHECK(v == 2.5);
    Tensor seq({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) seq[i] = static_cast<double>(i + 1);
    const Tensor p = ops::adaptive_avg_pool2d(g.constant(seq), 2, 2).value();
    CHECK(p[0] == 3.5);
    CHECK(p[1] == 5.5);
    CHECK(p[2] == 11.5);
    CHECK(p[3] == 13.5);
    CHECK(ops::pool2d(g.constant(values({1, 1, 2, 2}, {1, 2, 3, 4})), ops::PoolKind::max, 2).value().item() == 4.0);
    CHECK_THROWS_AS(ops::adaptive_avg_pool2d(g.constant(seq), 5, 2), ShapeError);
  }

  TEST_CASE("adaptive pooling uses floor/ceil bins") {
    Rng rng(16);
    const Tensor x = random_tensor(rng, {1, 1, 7, 5});
    Graph g;
    const Tensor y = ops::adaptive_avg_pool2d(g.constant(x), 3, 2).value();
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 2; ++j) {
        const auto y0 = (i * 7) / 3, y1 = ((i + 1) * 7 + 2) / 3, x0 = (j * 5) / 2, x1 = ((j + 1) * 5 + 1) / 2;
        double s = 0.0;
        for (auto a = y0; a < y1; ++a)
          for (auto b = x0; b < x1; ++b) s += x.at({0, 0, a, b});
        CHECK(y.at({0, 0, i, j}) == doctest::Approx(s / static_cast<double>((y1 - y0) * (x1 - x0))).epsilon(1e-14));
      }
  }

  TEST_CASE("pooling gradients") {
    Rng rng(17);
    const Tensor x = random_tensor(rng, {2, 2, 4, 6});
    CHECK(gradient_error([](Graph& g, const std::vector<Var>& v) { return random_projection(g, ops::pool2d(v[0], ops::PoolKind::max, 2)); },
                         {x}) <= 1e-6);
    CHECK(gradient_error([](Graph& g, const std::vector<Var>& v) { return random_projection(g, ops::adaptive_avg_pool2d(v[0], 3, 4)); },
                         {x}) <= 1e-6);
  }

  TEST_CASE("grid sample examples") {
    Graph g;
    Rng rng(18);
    const Tensor x = random_tensor(rng, {1, 2, 3, 4});
    Tensor coords({1, 3, 4, 2});
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 4; ++j) {
        coords.at({0, i, j, 0}) = static_cast<double>(j);
        coords.at({0, i, j, 1}) = static_cast<double>(i);
      }
    CHECK(equal_values(ops::grid_sample_bilinear(g.constant(x), g.constant(coords)).value(), x));
    const Tensor y = ops::grid_sample_bilinear(g.constant(values({1, 1, 2, 2}, {0, 1, 2, 3})),
                                               g.constant(values({1, 1, 1, 2}, {0.5, 0.5})))
                         .value();
    CHECK(y.item() == 1.5);
    const Tensor clamped = ops::grid_sample_bilinear(g.constant(values({1, 1, 2, 2}, {0, 1, 2, 3})),
                                                     g.constant(values({1, 1, 1, 2}, {-3.0, 9.0})))
                               .value();
    CHECK(clamped.item() == 2.0);
  }

  TEST_CASE("grid sample gradients wrt input and coordinates") {
    Rng rng(19);
    const Tensor x = random_tensor(rng, {1, 2, 4, 5});
    Tensor coords({1, 3, 3, 2});
    for (std::size_t i = 0; i < coords.size(); ++i) {
      // Keep clear of integer coordinates, where the interpolant has kinks.
      coords[i] = static_cast<double>(random_int(rng, 0, 2)) + rng.uniform(0.2, 0.8);
    }
    auto f = [](Graph& g, const std::vector<Var>& v) { return random_projection(g, ops::grid_sample_bilinear(v[0], v[1])); };
    CHECK(gradient_error(f, {x, coords}) <= 1e-5);
  }

  TEST_CASE("shape ops and reductions gradients") {
    Rng rng(20);
    const Tensor x = random_tensor(rng, {2, 3, 4});
    auto f = [](int kind) {
      return [kind](Graph& g, const std::vector<Var>& v) {
        switch (kind) {
          case 0: return random_projection(g, ops::slice(v[0], 2, 1, 2));
          case 1: return random_projection(g, ops::mean_axis(v[0], 1));
          case 2: return random_projection(g, ops::max_axis(v[0], 2));
          case 3: return random_projection(g, ops::broadcast_to(ops::slice(v[0], 0, 0, 1), {3, 2, 3, 4}));
          case 4: return ops::mean(ops::square(v[0]));
          default: return random_projection(g, ops::reshape(ops::permute(v[0], {1, 2, 0}), {12, 2}));
        }
      };
    };
    for (int k = 0; k < 6; ++k) {
      CAPTURE(k);
      CHECK(gradient_error(f(k), {x}) <= 1e-6);
    }
  }

  TEST_CASE("backward semantics") {
    Graph g;
    const Var x = g.variable(Tensor({2, 3}, 0.5));
    const Var unused = g.variable(Tensor({4}));
    g.backward(ops::sum(x));
    for (double v : g.grad(x).values()) CHECK(v == 1.0);
    CHECK((g.grad(unused).empty() || max_abs_diff(g.grad(unused), Tensor::zeros({4})) == 0.0));
    CHECK_THROWS_AS(g.backward(ops::sum(x)), StateError);
    g.reset();
    const Var y = g.variable(Tensor({2}, 1.0));
    CHECK_THROWS_AS(g.backward(ops::mul(y, 2.0)), ShapeError);
  }

  TEST_CASE("gradients accumulate across uses and into parameters") {
    Parameter p{"w", Tensor({2}, 3.0), Tensor(), true};
    p.zero_grad();
    Graph g;
    const Var w = g.param(p);
    const Var w_again = g.param(p);
    CHECK(w.id() == w_again.id());
    g.backward(ops::sum(ops::add(ops::mul(w, w), w)));
    for (double v : p.grad.values()) CHECK(v == 7.0);
  }

  TEST_CASE("frozen parameters and no-grad graphs record no gradient") {
    Parameter p{"w", Tensor({2}, 3.0), Tensor(), true};
    p.trainable = false;
    p.zero_grad();
    Graph g;
    const Var w = g.param(p);
    CHECK_FALSE(w.requires_grad());
    Graph ng(false);
    CHECK_FALSE(ng.variable(Tensor({1})).requires_grad());
  }

  TEST_CASE("debug checks reject non-finite values") {
    autograd::set_debug_checks(true);
    Graph g;
    const Var x = g.constant(values({2}, {1.0, std::numeric_limits<double>::infinity()}));
    CHECK_THROWS_AS(ops::mul(x, 0.0), NumericError);
    autograd::set_debug_checks(false);
    CHECK_NOTHROW(ops::mul(x, 0.0));
  }
}
