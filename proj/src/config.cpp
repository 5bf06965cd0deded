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

#include "gapose/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "gapose/blocks.hpp"
#include "gapose/errors.hpp"

namespace gapose {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); }

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) fail(field, why);
}

std::string skeleton_name(SkeletonKind k) { return k == SkeletonKind::coco17 ? "coco17" : "tiny8"; }

// Reads `key` from `obj` into `out` if present; type errors name the field.
template <class T>
void read(const json& obj, const char* key, const std::string& path, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    fail(path + key, std::string("wrong type (") + e.what() + ")");
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& path) {
  if (!obj.is_object()) fail(path.empty() ? "config" : path.substr(0, path.size() - 1), "expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.contains(it.key())) fail(path + it.key(), "unknown field");
  }
}

}  // namespace

void ModelConfig::validate() const {
  require(input_h > 0 && input_w > 0, "input_size", "must be positive");
  require(input_h % 32 == 0 && input_w % 32 == 0, "input_size",
          "height and width must be divisible by 32 (got " + std::to_string(input_h) + "x" + std::to_string(input_w) + ")");
  require(stem_width > 0, "stem_width", "must be positive");
  require(stem_width % 2 == 0, "stem_width", "must be even");
  require(stage_channels[0] == stem_width, "stage_channels", "first stage width must equal stem_width");
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string f = "stage_channels[" + std::to_string(i) + "]";
    require(stage_channels[i] > 0, f, "must be positive");
    if (i > 0) require(stage_channels[i] == 2 * stage_channels[i - 1], f, "must double the previous stage");
    require(stage_depths[i] >= 1, "stage_depths[" + std::to_string(i) + "]", "must be >= 1");
    require(heads_divisor > 0 && stage_channels[i] % heads_divisor == 0, "heads_divisor",
            "must divide every stage width");
    require(stage_channels[i] % se_reduction == 0, "se_reduction", "must divide every stage width");
  }
  require(cbam_ratio > 0 && stage_channels[1] / cbam_ratio >= 1, "cbam_ratio", "bottleneck would be empty");
  require(n_agents >= 1, "n_agents", "must be >= 1");
  try {
    blocks::agent_grid(n_agents, input_h / 32, input_w / 32);
  } catch (const ConfigError& e) {
    fail("n_agents", e.what());
  }
  require(fusion_width > 0, "fusion_width", "must be positive");
  require(decoder_widths[0] > 0 && decoder_widths[1] > 0, "decoder_widths", "must be positive");
  require(num_keypoints > 0, "num_keypoints", "must be positive");
  require(gefb_expansion >= 1, "gefb_expansion", "must be >= 1");
  require(token_count >= 1, "token_count", "must be >= 1");
  require(token_dim >= 1, "token_dim", "must be >= 1");
  require(learning_rate >= 0.0, "learning_rate", "must be non-negative");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(loss_weights.gt >= 0 && loss_weights.output_distill >= 0 && loss_weights.token_distill >= 0,
          "loss_weights", "must be non-negative");
  require(dataset.n_samples >= 1, "dataset.n_samples", "must be >= 1");
  require(dataset.occlusion_prob >= 0.0 && dataset.occlusion_prob <= 1.0, "dataset.occlusion_prob",
          "must lie in [0, 1]");
  require(dataset.heatmap_sigma > 0.0, "dataset.heatmap_sigma", "must be positive");
  const std::int64_t skeleton_joints = dataset.skeleton == SkeletonKind::coco17 ? 17 : 8;
  require(skeleton_joints == num_keypoints, "num_keypoints",
          "skeleton '" + skeleton_name(dataset.skeleton) + "' has " + std::to_string(skeleton_joints) + " joints");
}

ModelConfig default_config() { return ModelConfig{}; }

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_h = 64;
  c.input_w = 64;
  c.stem_width = 32;
  c.stage_channels = {32, 64, 128, 256};
  c.stage_depths = {1, 1, 1, 1};
  c.n_agents = 4;
  c.num_keypoints = 8;
  c.learning_rate = 2e-3;
  c.dataset.skeleton = SkeletonKind::tiny8;
  return c;
}

json to_json(const ModelConfig& c) {
  json j;
  j["input_size"] = {c.input_h, c.input_w};
  j["stem_width"] = c.stem_width;
  j["stage_channels"] = c.stage_channels;
  j["stage_depths"] = c.stage_depths;
  j["heads_divisor"] = c.heads_divisor;
  j["n_agents"] = c.n_agents;
  j["fusion_width"] = c.fusion_width;
  j["decoder_widths"] = c.decoder_widths;
  j["num_keypoints"] = c.num_keypoints;
  j["gefb_expansion"] = c.gefb_expansion;
  j["se_reduction"] = c.se_reduction;
  j["cbam_ratio"] = c.cbam_ratio;
  j["token_count"] = c.token_count;
  j["token_dim"] = c.token_dim;
  j["toggles"] = {{"glace", c.toggles.glace}, {"agent_attention", c.toggles.agent_attention},
                  {"gefb", c.toggles.gefb},   {"dysample", c.toggles.dysample},
                  {"cbam", c.toggles.cbam},   {"se", c.toggles.se}};
  j["loss_weights"] = {{"gt", c.loss_weights.gt},
                       {"output_distill", c.loss_weights.output_distill},
                       {"token_distill", c.loss_weights.token_distill}};
  j["seed"] = c.seed;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["teacher_checkpoint"] = c.teacher_checkpoint;
  j["dataset"] = {{"n_samples", c.dataset.n_samples},       {"seed", c.dataset.seed},
                  {"skeleton", skeleton_name(c.dataset.skeleton)}, {"pose_jitter", c.dataset.pose_jitter},
                  {"occlusion_prob", c.dataset.occlusion_prob},    {"noise_level", c.dataset.noise_level},
                  {"heatmap_sigma", c.dataset.heatmap_sigma}};
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  reject_unknown(j,
                 {"input_size", "stem_width", "stage_channels", "stage_depths", "heads_divisor", "n_agents",
                  "fusion_width", "decoder_widths", "num_keypoints", "gefb_expansion", "se_reduction", "cbam_ratio",
                  "token_count", "token_dim", "toggles", "loss_weights", "seed", "learning_rate", "batch_size",
                  "teacher_checkpoint", "dataset"},
                 "");
  if (auto it = j.find("input_size"); it != j.end()) {
    if (!it->is_array() || it->size() != 2) fail("input_size", "expected [height, width]");
    try {
      c.input_h = (*it)[0].get<std::int64_t>();
      c.input_w = (*it)[1].get<std::int64_t>();
    } catch (const json::exception&) {
      fail("input_size", "expected two integers");
    }
  }
  read(j, "stem_width", "", c.stem_width);
  read(j, "stage_channels", "", c.stage_channels);
  read(j, "stage_depths", "", c.stage_depths);
  read(j, "heads_divisor", "", c.heads_divisor);
  read(j, "n_agents", "", c.n_agents);
  read(j, "fusion_width", "", c.fusion_width);
  read(j, "decoder_widths", "", c.decoder_widths);
  read(j, "num_keypoints", "", c.num_keypoints);
  read(j, "gefb_expansion", "", c.gefb_expansion);
  read(j, "se_reduction", "", c.se_reduction);
  read(j, "cbam_ratio", "", c.cbam_ratio);
  read(j, "token_count", "", c.token_count);
  read(j, "token_dim", "", c.token_dim);
  read(j, "seed", "", c.seed);
  read(j, "learning_rate", "", c.learning_rate);
  read(j, "batch_size", "", c.batch_size);
  read(j, "teacher_checkpoint", "", c.teacher_checkpoint);
  if (auto it = j.find("toggles"); it != j.end()) {
    reject_unknown(*it, {"glace", "agent_attention", "gefb", "dysample", "cbam", "se"}, "toggles.");
    read(*it, "glace", "toggles.", c.toggles.glace);
    read(*it, "agent_attention", "toggles.", c.toggles.agent_attention);
    read(*it, "gefb", "toggles.", c.toggles.gefb);
    read(*it, "dysample", "toggles.", c.toggles.dysample);
    read(*it, "cbam", "toggles.", c.toggles.cbam);
    read(*it, "se", "toggles.", c.toggles.se);
  }
  if (auto it = j.find("loss_weights"); it != j.end()) {
    reject_unknown(*it, {"gt", "output_distill", "token_distill"}, "loss_weights.");
    read(*it, "gt", "loss_weights.", c.loss_weights.gt);
    read(*it, "output_distill", "loss_weights.", c.loss_weights.output_distill);
    read(*it, "token_distill", "loss_weights.", c.loss_weights.token_distill);
  }
  if (auto it = j.find("dataset"); it != j.end()) {
    reject_unknown(*it,
                   {"n_samples", "seed", "skeleton", "pose_jitter", "occlusion_prob", "noise_level", "heatmap_sigma"},
                   "dataset.");
    read(*it, "n_samples", "dataset.", c.dataset.n_samples);
    read(*it, "seed", "dataset.", c.dataset.seed);
    std::string skeleton = skeleton_name(c.dataset.skeleton);
    read(*it, "skeleton", "dataset.", skeleton);
    if (skeleton == "coco17") {
      c.dataset.skeleton = SkeletonKind::coco17;
    } else if (skeleton == "tiny8") {
      c.dataset.skeleton = SkeletonKind::tiny8;
    } else {
      fail("dataset.skeleton", "unknown skeleton '" + skeleton + "' (expected coco17 or tiny8)");
    }
    read(*it, "pose_jitter", "dataset.", c.dataset.pose_jitter);
    read(*it, "occlusion_prob", "dataset.", c.dataset.occlusion_prob);
    read(*it, "noise_level", "dataset.", c.dataset.noise_level);
    read(*it, "heatmap_sigma", "dataset.", c.dataset.heatmap_sigma);
  }
  c.validate();
  return c;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON (" + e.what() + ")");
  }
  return config_from_json(j);
}

}  // namespace gapose
