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

// Shared helpers for the unit tests: random tensors, small generators and
// central-difference gradient checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gapose/autograd.hpp"
#include "gapose/config.hpp"
#include "gapose/nn.hpp"
#include "gapose/ops.hpp"
#include "gapose/random.hpp"

namespace gapose::testing {

using autograd::Graph;
using autograd::Var;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::int64_t random_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// |a - b| / max(|a|, |b|); pairs that are both below `floor` in magnitude
// count as agreeing.
inline double relative_error(double a, double b, double floor = 1e-8) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < floor) return 0.0;
  return std::abs(a - b) / scale;
}

using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Largest relative error between autodiff and central differences over every
// element of every input.
inline double gradient_error(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.variable(t));
    const Var loss = f(g, vars);
    g.backward(loss);
    for (const Var& v : vars) {
      const Tensor& gr = g.grad(v);
      analytic.push_back(gr.empty() ? Tensor::zeros(v.shape()) : gr);
    }
  }
  auto eval = [&](const std::vector<Tensor>& in) {
    Graph g(false);
    std::vector<Var> vars;
    for (const Tensor& t : in) vars.push_back(g.constant(t));
    return f(g, vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = eval(inputs);
      inputs[k][i] = x0 - h;
      const double fm = eval(inputs);
      inputs[k][i] = x0;
      worst = std::max(worst, relative_error(analytic[k][i], (fp - fm) / (2.0 * h)));
    }
  }
  return worst;
}

// sum(y * weights) with fixed random weights, turning any op into a scalar
// whose gradient exercises every output element.
inline Var random_projection(Graph& g, const Var& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, g.constant(random_tensor(rng, y.shape()))));
}

using ModelLoss = std::function<Var(nn::Context&)>;

// Worst relative error between autodiff and central differences over the
// listed elements of named parameters; an empty index list means every element.
inline double parameter_gradient_error(nn::ParameterSet& set, const ModelLoss& f, const std::vector<std::string>& names,
                                       double h = 1e-5, std::size_t max_elements = 64) {
  set.zero_grad();
  {
    Graph g;
    nn::Context ctx{g, true};
    g.backward(f(ctx));
  }
  auto eval = [&] {
    Graph g(false);
    nn::Context ctx{g, true};
    return f(ctx).value().item();
  };
  double worst = 0.0;
  for (const std::string& name : names) {
    Parameter* p = set.find(name);
    if (p == nullptr) throw std::runtime_error("no parameter " + name);
    const std::size_t n = std::min(p->value.size(), max_elements);
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = p->value[i];
      p->value[i] = x0 + h;
      const double fp = eval();
      p->value[i] = x0 - h;
      const double fm = eval();
      p->value[i] = x0;
      worst = std::max(worst, relative_error(p->grad[i], (fp - fm) / (2.0 * h)));
    }
  }
  return worst;
}

// Smallest config that exercises every block.
inline ModelConfig micro_config() {
  ModelConfig c = tiny_config();
  c.input_h = 32;
  c.input_w = 32;
  c.stem_width = 8;
  c.stage_channels = {8, 16, 32, 64};
  c.heads_divisor = 8;
  c.n_agents = 1;
  c.fusion_width = 16;
  c.decoder_widths = {8, 8};
  c.token_dim = 4;
  c.dataset.n_samples = 2;
  c.batch_size = 2;
  return c;
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gapose_test_" + name)).string();
}

inline double sum_abs(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += std::abs(v);
  return s;
}

}  // namespace gapose::testing
