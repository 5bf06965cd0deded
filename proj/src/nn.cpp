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

#include "gapose/nn.hpp"

#include <cmath>

#include "gapose/errors.hpp"

namespace gapose::nn {

Parameter& ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(value);
  p->trainable = trainable;
  p->zero_grad();
  index_.emplace(std::move(name), items_.size());
  items_.push_back(std::move(p));
  return *items_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : items_[it->second].get();
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : items_[it->second].get();
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterSet::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : items_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

std::int64_t ParameterSet::count_trainable() const {
  std::int64_t n = 0;
  for (const auto& p : items_) {
    if (p->trainable) n += static_cast<std::int64_t>(p->value.size());
  }
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p->grad.fill(0.0);
}

Initializer::Initializer(ParameterSet& set, Rng& rng, std::string prefix)
    : set_(&set), rng_(&rng), prefix_(std::move(prefix)) {}

Initializer Initializer::scope(std::string_view child) const { return Initializer(*set_, *rng_, qualify(child)); }

std::string Initializer::qualify(std::string_view name) const {
  return prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name);
}

Parameter& Initializer::param(std::string_view name, Shape shape, Init init, std::int64_t fan_in) const {
  Tensor t(std::move(shape));
  switch (init) {
    case Init::fan_in_uniform: {
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (double& v : t.values()) v = rng_->uniform(-bound, bound);
      break;
    }
    case Init::zeros:
      break;
    case Init::ones:
      t.fill(1.0);
      break;
  }
  return set_->add(qualify(name), std::move(t), true);
}

Parameter& Initializer::buffer(std::string_view name, Tensor value) const {
  return set_->add(qualify(name), std::move(value), false);
}

Conv2d::Conv2d(const Initializer& init, std::string_view name, const Spec& spec) : opts_(spec.opts) {
  if (spec.in_channels % spec.opts.groups != 0 || spec.out_channels % spec.opts.groups != 0) {
    throw ConfigError(std::string(name) + ": channels not divisible by groups");
  }
  const Initializer s = init.scope(name);
  const std::int64_t cin_g = spec.in_channels / spec.opts.groups;
  const std::int64_t fan_in = cin_g * spec.kernel * spec.kernel;
  weight_ = &s.param("weight", Shape{spec.out_channels, cin_g, spec.kernel, spec.kernel}, spec.weight_init, fan_in);
  if (spec.bias) bias_ = &s.param("bias", Shape{spec.out_channels}, spec.bias_init, fan_in);
}

Var Conv2d::forward(const Context& ctx, const Var& x) const {
  std::optional<Var> b;
  if (bias_) b = ctx.param(*bias_);
  return ops::conv2d(x, ctx.param(*weight_), b, opts_);
}

Deconv2d::Deconv2d(const Initializer& init, std::string_view name, std::int64_t in_channels,
                   std::int64_t out_channels, int kernel, Deconv2dOptions opts, bool bias)
    : opts_(opts) {
  const Initializer s = init.scope(name);
  const std::int64_t fan_in = out_channels * kernel * kernel;
  weight_ = &s.param("weight", Shape{in_channels, out_channels, kernel, kernel}, Init::fan_in_uniform, fan_in);
  if (bias) bias_ = &s.param("bias", Shape{out_channels}, Init::fan_in_uniform, fan_in);
}

Var Deconv2d::forward(const Context& ctx, const Var& x) const {
  std::optional<Var> b;
  if (bias_) b = ctx.param(*bias_);
  return ops::deconv2d(x, ctx.param(*weight_), b, opts_);
}

BatchNorm2d::BatchNorm2d(const Initializer& init, std::string_view name, std::int64_t channels) {
  const Initializer s = init.scope(name);
  gamma_ = &s.param("gamma", Shape{channels}, Init::ones);
  beta_ = &s.param("beta", Shape{channels}, Init::zeros);
  running_mean_ = &s.buffer("running_mean", Tensor::zeros(Shape{channels}));
  running_var_ = &s.buffer("running_var", Tensor::full(Shape{channels}, 1.0));
}

Var BatchNorm2d::forward(const Context& ctx, const Var& x) const {
  ops::BatchNormOptions opts;
  opts.training = ctx.training;
  return ops::batchnorm2d(x, ctx.param(*gamma_), ctx.param(*beta_), running_mean_->value, running_var_->value, opts);
}

Linear::Linear(const Initializer& init, std::string_view name, std::int64_t in_features, std::int64_t out_features,
               Init weight_init, Init bias_init) {
  const Initializer s = init.scope(name);
  weight_ = &s.param("weight", Shape{in_features, out_features}, weight_init, in_features);
  bias_ = &s.param("bias", Shape{out_features}, bias_init, in_features);
}

Var Linear::forward(const Context& ctx, const Var& x) const {
  return ops::add(ops::matmul(x, ctx.param(*weight_)), ctx.param(*bias_));
}

}  // namespace gapose::nn
