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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <limits>
#include <set>
#include <string>

#include "doctest.h"
#include "gapose/data.hpp"
#include "gapose/errors.hpp"
#include "gapose/kernels.hpp"
#include "gapose/model.hpp"
#include "gapose/training.hpp"
#include "support.hpp"

using namespace gapose;
using namespace gapose::testing;

namespace {

// Smallest config that still exercises every module.
std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f << bytes;
}

bool same_parameters(const model::PoseModel& a, const model::PoseModel& b) {
  const auto pa = a.parameters().all(), pb = b.parameters().all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || pa[i]->value.shape() != pb[i]->value.shape()) return false;
    if (std::memcmp(pa[i]->value.data(), pb[i]->value.data(), pa[i]->value.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::int64_t conv(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t groups = 1) {
  return co * (ci / groups) * k * k + co;
}
std::int64_t linear(std::int64_t i, std::int64_t o) { return i * o + o; }
std::int64_t bn(std::int64_t c) { return 2 * c; }

// Closed-form trainable parameter count, layer by layer.
std::int64_t analytic_params(const ModelConfig& c) {
  const std::int64_t w = c.stem_width;
  std::int64_t n = c.toggles.glace ? conv(3, w / 2, 3) + bn(w / 2) + conv(w / 2, w, 3) + bn(w) + conv(w, w, 3) + bn(w)
                                   : conv(3, w, 4) + bn(w);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::int64_t ch = c.stage_channels[i];
    if (i > 0) {
      n += conv(ch / 2, ch, 3) + bn(ch);
      if (c.toggles.cbam) {
        const std::int64_t hid = std::max<std::int64_t>(1, ch / c.cbam_ratio);
        n += linear(ch, hid) + linear(hid, ch) + conv(2, 1, 7);
      }
    }
    const std::int64_t r = c.gefb_expansion * ch;
    std::int64_t block = bn(ch);
    block += c.toggles.agent_attention ? 4 * linear(ch, ch) : conv(ch, ch, 7, ch) + conv(ch, ch, 1);
    if (c.toggles.se) block += linear(ch, ch / c.se_reduction) + linear(ch / c.se_reduction, ch);
    block += c.toggles.gefb ? conv(ch, r, 1) + conv(r, r, 3, r) + conv(ch, r, 1) + conv(r, ch, 1)
                            : conv(ch, r, 1) + conv(r, ch, 1);
    n += c.stage_depths[i] * block;
  }
  const std::int64_t total = c.stage_channels[0] + c.stage_channels[1] + c.stage_channels[2] + c.stage_channels[3];
  if (c.toggles.dysample) n += conv(c.stage_channels[3], 8, 1);
  const std::int64_t f = c.fusion_width, d0 = c.decoder_widths[0], d1 = c.decoder_widths[1];
  n += conv(total, f, 1) + bn(f);
  n += f * d0 * 16 + d0 + bn(d0) + d0 * d1 * 16 + d1 + bn(d1);
  n += conv(d1, c.num_keypoints, 1);
  n += c.token_count * c.token_dim + linear(c.token_dim + f, c.num_keypoints * c.heatmap_h() * c.heatmap_w());
  return n;
}

std::string config_error_field(const std::function<void(ModelConfig&)>& edit) {
  ModelConfig c = tiny_config();
  edit(c);
  try {
    model::PoseModel m(c);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("default config shape chain") {
    const ModelConfig cfg = default_config();
    const model::PoseModel m(cfg);
    Graph g(false);
    const nn::Context ctx{g, false};
    const model::ForwardResult r = m.forward(ctx, g.constant(Tensor({1, 3, 256, 192})));
    CHECK(r.stem.shape() == Shape{1, 96, 64, 48});
    REQUIRE(r.pyramid.levels.size() == 4);
    CHECK(r.pyramid.levels[0].shape() == Shape{1, 96, 64, 48});
    CHECK(r.pyramid.levels[1].shape() == Shape{1, 192, 32, 24});
    CHECK(r.pyramid.levels[2].shape() == Shape{1, 384, 16, 12});
    CHECK(r.pyramid.levels[3].shape() == Shape{1, 768, 8, 6});
    CHECK(r.head.fused.shape() == Shape{1, 1440, 16, 12});
    CHECK(r.head.refined.shape() == Shape{1, 256, 16, 12});
    CHECK(r.heatmap().shape() == Shape{1, 17, 64, 48});
    CHECK(all_finite(r.heatmap().value()));
    MESSAGE("default config parameters: " << model::count_params(m));
  }

  TEST_CASE("every toggle pattern keeps the output shapes") {
    Rng rng(1);
    const Tensor images = random_tensor(rng, {2, 3, 32, 32}, 0.0, 1.0);
    for (int mask = 0; mask < 64; mask += 7) {
      ModelConfig cfg = micro_config();
      cfg.toggles = Toggles{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0,
                            (mask & 8) != 0, (mask & 16) != 0, (mask & 32) != 0};
      CAPTURE(mask);
      const model::PoseModel m(cfg);
      Graph g(false);
      const nn::Context ctx{g, true};
      const auto r = m.forward(ctx, g.constant(images));
      CHECK(r.heatmap().shape() == Shape{2, 8, 8, 8});
      CHECK(r.head.fused.shape() == Shape{2, 8 + 16 + 32 + 64, 2, 2});
      CHECK(all_finite(r.heatmap().value()));
      CHECK(model::count_params(m) == analytic_params(cfg));
    }
  }

  TEST_CASE("all toggles off still builds and runs on the tiny config") {
    ModelConfig cfg = tiny_config();
    cfg.toggles = Toggles{false, false, false, false, false, false};
    const model::PoseModel m(cfg);
    CHECK(m.predict(Tensor({1, 3, 64, 64})).shape() == Shape{1, 8, 16, 16});
  }

  TEST_CASE("construction is deterministic in the seed") {
    const ModelConfig cfg = micro_config();
    const model::PoseModel a(cfg), b(cfg);
    CHECK(same_parameters(a, b));
    ModelConfig other = cfg;
    other.seed = 99;
    CHECK_FALSE(same_parameters(a, model::PoseModel(other)));
  }

  TEST_CASE("parameter counting") {
    nn::ParameterSet set;
    Rng rng(2);
    const nn::Initializer init(set, rng);
    const nn::Conv2d c(init, "c", nn::Conv2d::Spec{4, 8, 1});
    CHECK(set.count_trainable() == 40);
    const ModelConfig tiny = tiny_config();
    const model::PoseModel m(tiny);
    CHECK(model::count_params(m) == analytic_params(tiny));
    std::set<std::string> names;
    for (const Parameter* p : m.parameters().all()) names.insert(p->name);
    CHECK(names.size() == m.parameters().all().size());
    MESSAGE("tiny config parameters: " << model::count_params(m));
  }

  TEST_CASE("invalid configs name the offending field") {
    CHECK(config_error_field([](ModelConfig& c) { c.input_h = 60; }).starts_with("input_size"));
    CHECK(config_error_field([](ModelConfig& c) { c.stage_channels[2] = 100; }).starts_with("stage_channels[2]"));
    CHECK(config_error_field([](ModelConfig& c) { c.heads_divisor = 5; }).starts_with("heads_divisor"));
    CHECK(config_error_field([](ModelConfig& c) { c.n_agents = 5; }).starts_with("n_agents"));
    CHECK(config_error_field([](ModelConfig& c) { c.num_keypoints = 17; }).starts_with("num_keypoints"));
    CHECK(config_error_field([](ModelConfig& c) { c.dataset.occlusion_prob = 2.0; }).starts_with("dataset.occlusion_prob"));
    CHECK(config_error_field([](ModelConfig&) {}).empty());
  }

  TEST_CASE("config json round trip") {
    ModelConfig c = micro_config();
    c.toggles.gefb = false;
    c.loss_weights.token_distill = 0.25;
    c.dataset.noise_level = 0.125;
    const ModelConfig back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    nlohmann::json bad = to_json(c);
    bad["stem_widht"] = 3;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  }

  TEST_CASE("adam matches the closed-form recursion on one parameter") {
    nn::ParameterSet set;
    Parameter& p = set.add("w", Tensor::scalar(0.5));
    model::Adam adam(model::AdamOptions{0.1});
    double w = 0.5, m = 0.0, v = 0.0;
    const double grads[] = {0.3, -1.2, 0.7};
    for (int t = 1; t <= 3; ++t) {
      const double gr = grads[t - 1];
      p.grad = Tensor::scalar(gr);
      adam.step(set);
      m = 0.9 * m + 0.1 * gr;
      v = 0.999 * v + 0.001 * gr * gr;
      const double mhat = m / (1.0 - std::pow(0.9, t)), vhat = v / (1.0 - std::pow(0.999, t));
      w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
      CHECK(p.value.item() == doctest::Approx(w).epsilon(1e-14));
    }
    CHECK(adam.steps() == 3);
  }

  TEST_CASE("adam skips frozen buffers") {
    nn::ParameterSet set;
    Parameter& buf = set.add("running", Tensor::scalar(2.0), false);
    buf.grad = Tensor::scalar(1.0);
    model::Adam adam;
    adam.step(set);
    CHECK(buf.value.item() == 2.0);
  }

  TEST_CASE("zero learning rate leaves trainable parameters bitwise unchanged") {
    ModelConfig cfg = micro_config();
    cfg.learning_rate = 0.0;
    model::PoseModel m(cfg);
    const model::PoseModel ref(cfg);
    model::Adam adam(model::AdamOptions{0.0});
    const auto batch = data::make_batch(data::generate_dataset(cfg));
    model::train_step(m, adam, batch);
    for (const Parameter* p : m.parameters().all()) {
      if (!p->trainable) continue;
      CHECK(bitwise_equal(p->value, ref.parameters().find(p->name)->value));
    }
  }

  TEST_CASE("repeated steps on one sample decrease gt_mse") {
    ModelConfig cfg = tiny_config();
    cfg.dataset.n_samples = 1;
    cfg.batch_size = 1;
    model::PoseModel m(cfg);
    model::Adam adam(model::AdamOptions{cfg.learning_rate});
    const auto batch = data::make_batch(data::generate_dataset(cfg));
    std::vector<double> gt;
    for (int i = 0; i < 11; ++i) gt.push_back(model::train_step(m, adam, batch).term("gt_mse"));
    for (int i = 0; i < 10; ++i) {
      CAPTURE(i);
      CHECK(gt[static_cast<std::size_t>(i + 1)] < gt[static_cast<std::size_t>(i)]);
    }
  }

  TEST_CASE("non-finite loss raises before any update") {
    model::PoseModel m(micro_config());
    m.parameters().find("head.final.bias")->value[0] = std::numeric_limits<double>::quiet_NaN();
    const model::PoseModel snapshot_cfg(micro_config());
    model::Adam adam;
    const auto batch = data::make_batch(data::generate_dataset(micro_config()));
    CHECK_THROWS_AS(model::train_step(m, adam, batch), TrainingDiverged);
    CHECK(adam.steps() == 0);
    CHECK(bitwise_equal(m.parameters().find("head.deconv1.weight")->value,
                        snapshot_cfg.parameters().find("head.deconv1.weight")->value));
  }

  TEST_CASE("teacher term is reported and vanishes for an identical eval-mode teacher") {
    const ModelConfig cfg = micro_config();
    const model::PoseModel m(cfg);
    const auto batch = data::make_batch(data::generate_dataset(cfg));
    const auto without = model::evaluate_loss(m, batch, false);
    CHECK_THROWS_AS(without.term("output_distill"), StateError);
    const auto with = model::evaluate_loss(m, batch, false, &m);
    CHECK(with.term("output_distill") == 0.0);
    CHECK(with.total == doctest::Approx(without.total).epsilon(1e-15));
    CHECK(with.term("token_distill") >= 0.0);
  }

  TEST_CASE("training is deterministic") {
    const ModelConfig cfg = micro_config();
    const auto a = training::fit(cfg, 3), b = training::fit(cfg, 3);
    REQUIRE(a.history.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.history[i].total == b.history[i].total);
    CHECK(same_parameters(*a.model, *b.model));
  }

  TEST_CASE("minibatches cycle through the dataset") {
    CHECK(training::batch_indices(5, 2, 0) == std::vector<std::size_t>{0, 1});
    CHECK(training::batch_indices(5, 2, 2) == std::vector<std::size_t>{4, 0});
    CHECK(training::batch_indices(3, 8, 1) == std::vector<std::size_t>{0, 1, 2});
  }

  TEST_CASE("scalar and avx2 kernels give bitwise identical model outputs") {
    if (kernels::avx2_table() == nullptr) {
      MESSAGE("AVX2 not available on this host");
      return;
    }
    const kernels::Isa original = kernels::active().isa;
    const ModelConfig cfg = micro_config();
    const model::PoseModel m(cfg);
    const auto batch = data::make_batch(data::generate_dataset(cfg));
    // Training-mode losses update running stats; predict first.
    kernels::select(kernels::Isa::scalar);
    const Tensor a = m.predict(batch.images);
    kernels::select(kernels::Isa::avx2);
    const Tensor b = m.predict(batch.images);
    kernels::select(kernels::Isa::scalar);
    const double la = model::evaluate_loss(m, batch, true).total;
    kernels::select(kernels::Isa::avx2);
    const double lb = model::evaluate_loss(m, batch, true).total;
    kernels::select(original);
    CHECK(bitwise_equal(a, b));
    CHECK(std::memcmp(&la, &lb, sizeof la) == 0);
  }

  TEST_CASE("full-model loss gradient matches central differences") {
    ModelConfig cfg = micro_config();
    model::PoseModel m(cfg);
    const auto batch = data::make_batch(data::generate_dataset(cfg));
    // Push zero-initialized projections off zero so every path carries gradient.
    Rng rng(3);
    for (Parameter* p : m.parameters().trainable())
      if (p->name.ends_with("proj.weight") || p->name.ends_with("offset.weight"))
        for (double& v : p->value.values()) v = rng.uniform(-0.05, 0.05);
    const auto loss = [&](nn::Context& ctx) {
      const auto r = m.forward(ctx, ctx.graph.constant(batch.images));
      const losses::LossInputs in{r.heatmap(), &batch.heatmaps, &batch.visibility, nullptr, &m.token_bank(), r.pooled};
      return losses::total_loss(ctx, in, cfg.loss_weights).total;
    };
    const double err = parameter_gradient_error(m.parameters(), loss,
                                                {"stem.conv1.weight", "backbone.stages.1.blocks.0.attn.q.weight",
                                                 "backbone.stages.2.blocks.0.gefb.gate.weight", "head.dysample.3.offset.weight",
                                                 "head.deconv1.weight", "tokens.tokens"},
                                                1e-5, 4);
    CHECK(err <= 1e-4);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load reproduce predictions bitwise") {
    const ModelConfig cfg = micro_config();
    auto fit = training::fit(cfg, 2);
    const std::string path = temp_path("roundtrip.gapw");
    model::save_checkpoint(*fit.model, path, &fit.optimizer);
    CHECK(read_bytes(path).substr(0, 4) == "GAPW");
    model::Checkpoint ck = model::load_checkpoint(path);
    const auto images = data::make_batch(data::generate_dataset(cfg)).images;
    CHECK(bitwise_equal(fit.model->predict(images), ck.model->predict(images)));
    CHECK(same_parameters(*fit.model, *ck.model));
    REQUIRE(ck.optimizer.has_value());
    CHECK(ck.optimizer->steps() == 2);
    CHECK(ck.optimizer->moments().size() == fit.optimizer.moments().size());
    for (const auto& [name, mv] : fit.optimizer.moments()) {
      REQUIRE(ck.optimizer->moments().count(name) == 1);
      CHECK(bitwise_equal(mv.m, ck.optimizer->moments().at(name).m));
      CHECK(bitwise_equal(mv.v, ck.optimizer->moments().at(name).v));
    }
    CHECK(to_json(ck.model->config()) == to_json(cfg));
    std::filesystem::remove(path);
  }

  TEST_CASE("a checkpoint without optimizer state loads without one") {
    const model::PoseModel m(micro_config());
    const std::string path = temp_path("noopt.gapw");
    model::save_checkpoint(m, path);
    CHECK_FALSE(model::load_checkpoint(path).optimizer.has_value());
    std::filesystem::remove(path);
  }

  TEST_CASE("corrupt files are rejected without touching the model") {
    const ModelConfig cfg = micro_config();
    const model::PoseModel src(cfg);
    const std::string path = temp_path("corrupt.gapw"), bad = temp_path("corrupt_bad.gapw");
    model::Adam adam;
    model::save_checkpoint(src, path, &adam);
    const std::string bytes = read_bytes(path);

    ModelConfig other = cfg;
    other.seed = 5;
    model::PoseModel target(other);
    const model::PoseModel pristine(other);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{40}, bytes.size() / 2,
                            bytes.size() - 1}) {
      CAPTURE(cut);
      write_bytes(bad, bytes.substr(0, cut));
      CHECK_THROWS_AS(model::load_checkpoint(bad), FormatError);
      CHECK_THROWS_AS(model::load_weights(target, bad), FormatError);
      CHECK(same_parameters(target, pristine));
    }
    std::string magic = bytes;
    magic[0] = 'X';
    write_bytes(bad, magic);
    try {
      model::load_checkpoint(bad);
      FAIL("bad magic accepted");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    std::string version = bytes;
    version[4] = 7;
    write_bytes(bad, version);
    CHECK_THROWS_AS(model::load_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(model::load_checkpoint(temp_path("does_not_exist.gapw")), FormatError);
    std::filesystem::remove(path);
    std::filesystem::remove(bad);
  }

  TEST_CASE("mid-record truncation names the tensor") {
    const model::PoseModel src(micro_config());
    const std::string path = temp_path("trunc.gapw");
    model::save_checkpoint(src, path);
    const std::string bytes = read_bytes(path);
    write_bytes(path, bytes.substr(0, bytes.size() - 12));
    try {
      model::load_checkpoint(path);
      FAIL("truncated checkpoint accepted");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      const auto params = src.parameters().all();
      CHECK(msg.find(params.back()->name) != std::string::npos);
    }
    std::filesystem::remove(path);
  }

  TEST_CASE("a tiny checkpoint does not load into the default model") {
    const model::PoseModel tiny(tiny_config());
    const std::string path = temp_path("tiny.gapw");
    model::save_checkpoint(tiny, path);
    model::PoseModel big(default_config());
    try {
      model::load_weights(big, path);
      FAIL("mismatched checkpoint accepted");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      bool names_tensor = false;
      for (const Parameter* p : big.parameters().all()) names_tensor = names_tensor || msg.find("'" + p->name + "'") != std::string::npos;
      CHECK_MESSAGE(names_tensor, msg);
    }
    std::filesystem::remove(path);
  }
}
