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

// Parameter registry and the basic layers every block is assembled from.

#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gapose/autograd.hpp"
#include "gapose/ops.hpp"
#include "gapose/random.hpp"

namespace gapose::nn {

using autograd::Var;

// Owns every parameter and buffer of a model under a unique dotted name.
// Parameters are heap-allocated, so pointers stay valid when the set moves.
class ParameterSet {
 public:
  // Duplicate names -> ConfigError.
  Parameter& add(std::string name, Tensor value, bool trainable = true);

  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> trainable();

  // Element count of trainable parameters (buffers excluded).
  std::int64_t count_trainable() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Init {
  // uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
  fan_in_uniform,
  zeros,
  ones,
};

// Naming scope plus RNG used while a model is being constructed.
class Initializer {
 public:
  Initializer(ParameterSet& set, Rng& rng, std::string prefix = {});

  Initializer scope(std::string_view child) const;
  const std::string& prefix() const { return prefix_; }

  Parameter& param(std::string_view name, Shape shape, Init init, std::int64_t fan_in = 1) const;
  Parameter& buffer(std::string_view name, Tensor value) const;

 private:
  std::string qualify(std::string_view name) const;

  ParameterSet* set_;
  Rng* rng_;
  std::string prefix_;
};

struct Context {
  autograd::Graph& graph;
  bool training = true;

  Var param(Parameter& p) const { return graph.param(p); }
};

class Conv2d {
 public:
  struct Spec {
    std::int64_t in_channels;
    std::int64_t out_channels;
    int kernel = 3;
    Conv2dOptions opts{};
    bool bias = true;
    Init weight_init = Init::fan_in_uniform;
    Init bias_init = Init::fan_in_uniform;
  };

  Conv2d() = default;
  Conv2d(const Initializer& init, std::string_view name, const Spec& spec);

  Var forward(const Context& ctx, const Var& x) const;

  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  Conv2dOptions opts_{};
};

// Weight layout [in, out, k, k].
class Deconv2d {
 public:
  Deconv2d() = default;
  Deconv2d(const Initializer& init, std::string_view name, std::int64_t in_channels, std::int64_t out_channels,
           int kernel, Deconv2dOptions opts, bool bias = true);

  Var forward(const Context& ctx, const Var& x) const;

  Parameter& weight() const { return *weight_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  Deconv2dOptions opts_{};
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const Initializer& init, std::string_view name, std::int64_t channels);

  Var forward(const Context& ctx, const Var& x) const;

  Parameter& gamma() const { return *gamma_; }
  Parameter& beta() const { return *beta_; }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* running_mean_ = nullptr;
  Parameter* running_var_ = nullptr;
};

// y = x W + b over the last axis; W is [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(const Initializer& init, std::string_view name, std::int64_t in_features, std::int64_t out_features,
         Init weight_init = Init::fan_in_uniform, Init bias_init = Init::fan_in_uniform);

  Var forward(const Context& ctx, const Var& x) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

}  // namespace gapose::nn
