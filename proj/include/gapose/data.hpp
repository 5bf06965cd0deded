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

// Synthetic stick-figure pose data and plain PPM/PGM image I/O.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gapose/config.hpp"
#include "gapose/losses.hpp"
#include "gapose/model.hpp"

namespace gapose::data {

using losses::Point;

struct Skeleton {
  std::string name;
  // Canonical joint positions, figure height 1, centred on the origin, y down.
  std::vector<Point> joints;
  std::vector<std::pair<int, int>> limbs;
};

const Skeleton& skeleton(SkeletonKind kind);

struct PoseSample {
  Tensor image;                 // [3,H,W], values in [0,1]
  std::vector<Point> keypoints;  // image pixels
  std::vector<bool> visible;
  Tensor heatmaps;  // [J,H/4,W/4]
};

// Heatmap coordinate of an image-space point.
inline Point to_heatmap(Point p) { return {p.x / 4.0, p.y / 4.0}; }

// Sample `index` is seeded by mix_seed(spec.seed, index).
PoseSample generate_sample(const DatasetSpec& spec, std::int64_t index, std::int64_t height, std::int64_t width,
                           std::int64_t joints);
// ConfigError when config.num_keypoints does not match the skeleton.
std::vector<PoseSample> generate_dataset(const ModelConfig& config);

model::Batch make_batch(const std::vector<PoseSample>& samples);

// Plain (ASCII) PPM P3 to [3,H,W] in [0,1]. FormatError on malformed input.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);
// Plain PGM P2, maxval 255, min-max normalized; a constant plane maps to 0.
void write_pgm(const std::string& path, const double* plane, std::int64_t height, std::int64_t width);

}  // namespace gapose::data
