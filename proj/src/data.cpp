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

#include "gapose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gapose/errors.hpp"
#include "gapose/random.hpp"

namespace gapose::data {
namespace {

Skeleton make_coco17() {
  Skeleton s;
  s.name = "coco17";
  s.joints = {{0.0, -0.42},   {0.025, -0.45}, {-0.025, -0.45}, {0.055, -0.43}, {-0.055, -0.43}, {0.12, -0.28},
              {-0.12, -0.28}, {0.17, -0.10},  {-0.17, -0.10},  {0.20, 0.06},   {-0.20, 0.06},   {0.08, 0.04},
              {-0.08, 0.04},  {0.09, 0.27},   {-0.09, 0.27},   {0.10, 0.50},   {-0.10, 0.50}};
  s.limbs = {{0, 1},  {0, 2},  {1, 3},   {2, 4},   {0, 5},   {0, 6},   {5, 6},   {5, 7},  {7, 9},
             {6, 8},  {8, 10}, {5, 11},  {6, 12},  {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}};
  return s;
}

Skeleton make_tiny8() {
  Skeleton s;
  s.name = "tiny8";
  // head, shoulders, hands, pelvis, feet
  s.joints = {{0.0, -0.42}, {0.14, -0.25}, {-0.14, -0.25}, {0.22, 0.05},
              {-0.22, 0.05}, {0.0, 0.05},  {0.12, 0.50},   {-0.12, 0.50}};
  s.limbs = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 4}, {1, 5}, {2, 5}, {5, 6}, {5, 7}};
  return s;
}

struct Rgb {
  double r, g, b;
};

Rgb hue_color(double h) {
  const double k = h * 6.0;
  auto channel = [k](double n) {
    const double t = std::fmod(n + k, 6.0);
    return 1.0 - std::max(0.0, std::min({t, 4.0 - t, 1.0}));
  };
  return {channel(5.0), channel(3.0), channel(1.0)};
}

double segment_distance(double px, double py, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a.x + t * vx), py - (a.y + t * vy));
}

class Canvas {
 public:
  Canvas(Tensor& image) : img_(image), h_(image.dim(1)), w_(image.dim(2)) {}

  // Anti-aliased coverage: 1 inside, linear ramp over the outer pixel.
  template <class Distance>
  void paint(double x0, double y0, double x1, double y1, double radius, Rgb c, Distance dist) {
    const auto xa = static_cast<std::int64_t>(std::max(0.0, std::floor(x0 - radius - 1)));
    const auto xb = static_cast<std::int64_t>(std::min(static_cast<double>(w_ - 1), std::ceil(x1 + radius + 1)));
    const auto ya = static_cast<std::int64_t>(std::max(0.0, std::floor(y0 - radius - 1)));
    const auto yb = static_cast<std::int64_t>(std::min(static_cast<double>(h_ - 1), std::ceil(y1 + radius + 1)));
    for (std::int64_t y = ya; y <= yb; ++y) {
      for (std::int64_t x = xa; x <= xb; ++x) {
        const double cov = std::clamp(radius + 0.5 - dist(static_cast<double>(x), static_cast<double>(y)), 0.0, 1.0);
        if (cov <= 0.0) continue;
        blend(0, y, x, c.r, cov);
        blend(1, y, x, c.g, cov);
        blend(2, y, x, c.b, cov);
      }
    }
  }

 private:
  void blend(std::int64_t ch, std::int64_t y, std::int64_t x, double v, double cov) {
    double& p = img_[static_cast<std::size_t>((ch * h_ + y) * w_ + x)];
    p = p * (1.0 - cov) + v * cov;
  }

  Tensor& img_;
  std::int64_t h_, w_;
};

}  // namespace

const Skeleton& skeleton(SkeletonKind kind) {
  static const Skeleton coco = make_coco17();
  static const Skeleton tiny = make_tiny8();
  return kind == SkeletonKind::coco17 ? coco : tiny;
}

PoseSample generate_sample(const DatasetSpec& spec, std::int64_t index, std::int64_t height, std::int64_t width,
                           std::int64_t joints) {
  const Skeleton& sk = skeleton(spec.skeleton);
  if (static_cast<std::int64_t>(sk.joints.size()) != joints) {
    throw ConfigError("num_keypoints: " + std::to_string(joints) + " does not match skeleton '" + sk.name + "' with " +
                      std::to_string(sk.joints.size()) + " joints");
  }
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const double scale = rng.uniform(0.7, 1.3);
  const double angle = rng.uniform(-30.0, 30.0) * std::numbers::pi / 180.0;
  const double cx = width * (0.5 + rng.uniform(-0.15, 0.15));
  const double cy = height * (0.5 + rng.uniform(-0.15, 0.15));
  const double figure = 0.55 * static_cast<double>(std::min(height, width)) * scale;
  const double ca = std::cos(angle), sa = std::sin(angle);

  PoseSample s;
  for (const Point& j : sk.joints) {
    const double jx = j.x + spec.pose_jitter * rng.normal();
    const double jy = j.y + spec.pose_jitter * rng.normal();
    s.keypoints.push_back({cx + figure * (ca * jx - sa * jy), cy + figure * (sa * jx + ca * jy)});
  }
  std::vector<bool> occluded(sk.joints.size());
  for (std::size_t j = 0; j < occluded.size(); ++j) occluded[j] = rng.uniform() < spec.occlusion_prob;

  s.image = Tensor(Shape{3, height, width});
  for (double& v : s.image.values()) v = spec.noise_level * rng.uniform();
  Canvas canvas(s.image);
  const Rgb limb{0.6, 0.6, 0.6};
  for (auto [a, b] : sk.limbs) {
    const Point pa = s.keypoints[static_cast<std::size_t>(a)], pb = s.keypoints[static_cast<std::size_t>(b)];
    canvas.paint(std::min(pa.x, pb.x), std::min(pa.y, pb.y), std::max(pa.x, pb.x), std::max(pa.y, pb.y), 0.75, limb,
                 [&](double x, double y) { return segment_distance(x, y, pa, pb); });
  }
  for (std::size_t j = 0; j < sk.joints.size(); ++j) {
    const Point p = s.keypoints[j];
    auto dist = [p](double x, double y) { return std::hypot(x - p.x, y - p.y); };
    if (occluded[j]) {
      const double g = spec.noise_level * rng.uniform();
      canvas.paint(p.x, p.y, p.x, p.y, 3.0, Rgb{g, g, g}, dist);
    } else {
      canvas.paint(p.x, p.y, p.x, p.y, 1.5, hue_color(static_cast<double>(j) / static_cast<double>(joints)), dist);
    }
  }

  std::vector<Point> hm_points;
  std::vector<bool> visible;
  for (std::size_t j = 0; j < sk.joints.size(); ++j) {
    hm_points.push_back(to_heatmap(s.keypoints[j]));
    visible.push_back(!occluded[j]);
  }
  losses::RenderedTargets t =
      losses::render_gaussian_targets(hm_points, visible, height / 4, width / 4, spec.heatmap_sigma);
  s.visible = std::move(t.visible);
  s.heatmaps = std::move(t.heatmaps);
  return s;
}

std::vector<PoseSample> generate_dataset(const ModelConfig& config) {
  std::vector<PoseSample> out;
  for (std::int64_t i = 0; i < config.dataset.n_samples; ++i) {
    out.push_back(generate_sample(config.dataset, i, config.input_h, config.input_w, config.num_keypoints));
  }
  return out;
}

model::Batch make_batch(const std::vector<PoseSample>& samples) {
  if (samples.empty()) throw ShapeError("make_batch: no samples");
  const Shape& is = samples[0].image.shape();
  const Shape& hs = samples[0].heatmaps.shape();
  const auto b = static_cast<std::int64_t>(samples.size());
  model::Batch batch{Tensor(Shape{b, is[0], is[1], is[2]}), Tensor(Shape{b, hs[0], hs[1], hs[2]}),
                     Tensor(Shape{b, hs[0]})};
  for (std::int64_t i = 0; i < b; ++i) {
    const PoseSample& s = samples[static_cast<std::size_t>(i)];
    if (s.image.shape() != is || s.heatmaps.shape() != hs) throw ShapeError("make_batch: samples differ in shape");
    std::copy_n(s.image.data(), s.image.size(), batch.images.data() + i * s.image.size());
    std::copy_n(s.heatmaps.data(), s.heatmaps.size(), batch.heatmaps.data() + i * s.heatmaps.size());
    for (std::int64_t j = 0; j < hs[0]; ++j) batch.visibility[static_cast<std::size_t>(i * hs[0] + j)] = s.visible[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  }
  return batch;
}

namespace {

// Whitespace-separated tokens with '#' comments to end of line.
class PnmTokens {
 public:
  explicit PnmTokens(std::istream& in) : in_(in) {}

  std::string next(const std::string& path) {
    std::string tok;
    for (;;) {
      const int c = in_.get();
      if (c == EOF) break;
      if (c == '#') {
        std::string skip;
        std::getline(in_, skip);
        if (!tok.empty()) break;
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("'" + path + "': unexpected end of image data");
    return tok;
  }

  std::int64_t number(const std::string& path) {
    const std::string t = next(path);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || v < 0) throw FormatError("'" + path + "': bad number '" + t + "'");
    return v;
  }

 private:
  std::istream& in_;
};

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open image '" + path + "'");
  PnmTokens tok(in);
  if (tok.next(path) != "P3") throw FormatError("'" + path + "' is not a plain PPM (P3) image");
  const std::int64_t w = tok.number(path), h = tok.number(path), maxval = tok.number(path);
  if (w <= 0 || h <= 0 || w > 16384 || h > 16384) throw FormatError("'" + path + "': bad image size");
  if (maxval <= 0 || maxval > 65535) throw FormatError("'" + path + "': bad maxval");
  Tensor img(Shape{3, h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const std::int64_t v = tok.number(path);
        if (v > maxval) throw FormatError("'" + path + "': sample exceeds maxval");
        img[static_cast<std::size_t>((c * h + y) * w + x)] = static_cast<double>(v) / static_cast<double>(maxval);
      }
    }
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected [3,H,W]");
  const std::int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write image '" + path + "'");
  out << "P3\n" << w << ' ' << h << "\n255\n";
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image[static_cast<std::size_t>((c * h + y) * w + x)], 0.0, 1.0);
        out << std::lround(v * 255.0) << (c == 2 ? '\n' : ' ');
      }
    }
  }
}

void write_pgm(const std::string& path, const double* plane, std::int64_t height, std::int64_t width) {
  const std::size_t n = static_cast<std::size_t>(height * width);
  const auto [lo, hi] = std::minmax_element(plane, plane + n);
  const double range = *hi - *lo;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write image '" + path + "'");
  out << "P2\n" << width << ' ' << height << "\n255\n";
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const double v = plane[y * width + x];
      const long q = range > 0.0 ? std::lround(255.0 * (v - *lo) / range) : 0;
      out << q << (x + 1 == width ? '\n' : ' ');
    }
  }
  if (!out) throw FormatError("failed writing image '" + path + "'");
}

}  // namespace gapose::data
