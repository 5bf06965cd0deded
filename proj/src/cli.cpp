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

#include "gapose/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "gapose/errors.hpp"
#include "gapose/training.hpp"
#include "json.hpp"

namespace gapose::cli {
namespace {

using nlohmann::json;

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

ModelConfig resolve_config(const std::string& path) { return path.empty() ? tiny_config() : load_config_file(path); }

std::string format_report(std::int64_t step, const model::StepReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "step " << step << " total=" << r.total;
  for (const auto& t : r.terms) os << ' ' << t.name << '=' << t.value << " (w=" << t.weight << ')';
  return os.str();
}

struct TrainArgs {
  std::string config, out;
  std::int64_t steps = 200, log_every = 10;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string ckpt, config;
  double alpha = 0.1;
  std::optional<std::uint64_t> seed;
};

struct AblateArgs {
  std::string config, out;
  std::int64_t steps = 60, log_every = 0;
  std::optional<std::uint64_t> seed;
};

struct InferArgs {
  std::string ckpt, image, out;
  std::optional<std::int64_t> synthetic;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ModelConfig cfg = resolve_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto log = [&](std::int64_t step, const model::StepReport& r) {
    if (a.log_every > 0 && (step % a.log_every == 0 || step == 1 || step == a.steps)) err << format_report(step, r) << '\n';
  };
  training::FitResult fit = training::fit(cfg, a.steps, log);
  model::save_checkpoint(*fit.model, a.out, &fit.optimizer);
  json summary{{"checkpoint", a.out}, {"steps", a.steps}, {"params", model::count_params(*fit.model)}};
  if (!fit.history.empty()) {
    summary["initial_loss"] = fit.history.front().total;
    summary["final_loss"] = fit.history.back().total;
    summary["initial_gt_mse"] = fit.history.front().term("gt_mse");
    summary["final_gt_mse"] = fit.history.back().term("gt_mse");
  }
  out << summary.dump() << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  model::Checkpoint ck = model::load_checkpoint(a.ckpt);
  ModelConfig data_cfg = ck.model->config();
  if (!a.config.empty()) data_cfg.dataset = load_config_file(a.config).dataset;
  if (a.seed) data_cfg.dataset.seed = *a.seed;
  const std::vector<data::PoseSample> samples = data::generate_dataset(data_cfg);
  const training::Metrics m = training::evaluate(*ck.model, samples, a.alpha);
  out << json{{"pck", number_or_null(m.pck.value)},
              {"mse", m.mse},
              {"n_samples", m.n_samples},
              {"alpha", a.alpha},
              {"n_visible", m.pck.count}}
             .dump()
      << '\n';
  return 0;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  ModelConfig base = resolve_config(a.config);
  if (a.seed) base.seed = *a.seed;
  std::ostringstream csv;
  csv << "glace,agent_attention,gefb,dysample,pck,mse\n";
  json rows = json::array();
  for (const AblationRow& row : ablation_rows()) {
    ModelConfig cfg = base;
    cfg.toggles.glace = row.glace;
    cfg.toggles.agent_attention = row.agent_attention;
    cfg.toggles.gefb = row.gefb;
    cfg.toggles.dysample = row.dysample;
    const auto log = [&](std::int64_t step, const model::StepReport& r) {
      if (a.log_every > 0 && step % a.log_every == 0) err << "  " << format_report(step, r) << '\n';
    };
    training::FitResult fit = training::fit(cfg, a.steps, log);
    const training::Metrics m = training::evaluate(*fit.model, data::generate_dataset(cfg));
    const double final_loss = fit.history.empty() ? std::nan("") : fit.history.back().total;
    if (!std::isfinite(final_loss) && !fit.history.empty()) throw TrainingDiverged("ablation row diverged");
    char line[160];
    std::snprintf(line, sizeof line, "%d,%d,%d,%d,%.6f,%.9g\n", row.glace, row.agent_attention, row.gefb,
                  row.dysample, m.pck.value, m.mse);
    csv << line;
    err << "ablate glace=" << row.glace << " agent_attention=" << row.agent_attention << " gefb=" << row.gefb
        << " dysample=" << row.dysample << " final_loss=" << final_loss << " pck=" << m.pck.value << " mse=" << m.mse
        << " params=" << model::count_params(*fit.model) << '\n';
    rows.push_back({{"glace", row.glace},
                    {"agent_attention", row.agent_attention},
                    {"gefb", row.gefb},
                    {"dysample", row.dysample},
                    {"final_loss", number_or_null(final_loss)},
                    {"pck", number_or_null(m.pck.value)},
                    {"mse", m.mse}});
  }
  if (a.out.empty()) {
    out << csv.str();
  } else {
    std::ofstream f(a.out);
    if (!f) throw FormatError("cannot write '" + a.out + "'");
    f << csv.str();
    out << json{{"csv", a.out}, {"steps", a.steps}, {"rows", rows}}.dump() << '\n';
  }
  return 0;
}

int cmd_infer(const InferArgs& a, std::ostream& out, std::ostream& err) {
  model::Checkpoint ck = model::load_checkpoint(a.ckpt);
  const ModelConfig& cfg = ck.model->config();
  Tensor image;
  if (!a.image.empty()) {
    image = data::read_ppm(a.image);
    if (image.dim(1) != cfg.input_h || image.dim(2) != cfg.input_w) {
      err << "resizing " << image.dim(1) << "x" << image.dim(2) << " input to " << cfg.input_h << "x" << cfg.input_w
          << '\n';
      autograd::Graph g(false);
      image = head::bilinear_resize(g.constant(image.reshaped({1, 3, image.dim(1), image.dim(2)})), cfg.input_h,
                                    cfg.input_w)
                  .value()
                  .reshaped({3, cfg.input_h, cfg.input_w});
    }
  } else {
    if (*a.synthetic < 0) throw ConfigError("synthetic: index must be >= 0");
    image = data::generate_sample(cfg.dataset, *a.synthetic, cfg.input_h, cfg.input_w, cfg.num_keypoints).image;
  }
  const Tensor heatmap = ck.model->predict(image.reshaped({1, 3, cfg.input_h, cfg.input_w}));
  const auto keypoints = head::argmax_keypoints(heatmap)[0];
  std::filesystem::create_directories(a.out);
  const std::int64_t joints = heatmap.dim(1), h = heatmap.dim(2), w = heatmap.dim(3);
  json kp = json::array();
  for (std::int64_t j = 0; j < joints; ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "heatmap_%02lld.pgm", static_cast<long long>(j));
    data::write_pgm((std::filesystem::path(a.out) / name).string(), heatmap.data() + j * h * w, h, w);
    const auto& k = keypoints[static_cast<std::size_t>(j)];
    kp.push_back({{"joint", j}, {"x", k.x}, {"y", k.y}, {"score", k.score}});
  }
  const json doc{{"heatmap_size", {h, w}}, {"keypoints", kp}};
  const std::string path = (std::filesystem::path(a.out) / "keypoints.json").string();
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write '" + path + "'");
  f << doc.dump(2) << '\n';
  out << doc.dump() << '\n';
  return 0;
}

}  // namespace

const std::array<AblationRow, 8>& ablation_rows() {
  static const std::array<AblationRow, 8> rows{{{false, false, false, false},
                                                {true, false, false, false},
                                                {false, true, false, false},
                                                {false, false, true, false},
                                                {true, true, false, false},
                                                {true, false, true, false},
                                                {true, true, true, false},
                                                {true, true, true, true}}};
  return rows;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose estimation with agent attention and gated feedforward blocks", "gapose"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train on the synthetic dataset and write a checkpoint");
  train->add_option("--config", ta.config, "JSON model config (default: tiny config)")->check(CLI::ExistingFile);
  train->add_option("--steps", ta.steps, "Adam steps")->check(CLI::NonNegativeNumber);
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--seed", ta.seed, "Override the initialization seed");
  train->add_option("--log-every", ta.log_every, "Log every N steps to stderr (0: off)")->check(CLI::NonNegativeNumber);

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints JSON metrics");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint path")->required();
  eval->add_option("--config", ea.config, "Take the dataset spec from this config")->check(CLI::ExistingFile);
  eval->add_option("--alpha", ea.alpha, "PCK threshold fraction of the heatmap diagonal")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ea.seed, "Override the dataset seed");

  AblateArgs aa;
  CLI::App* ablate = app.add_subcommand("ablate", "Train the eight ablation rows; emits CSV");
  ablate->add_option("--config", aa.config, "JSON model config (default: tiny config)")->check(CLI::ExistingFile);
  ablate->add_option("--steps", aa.steps, "Adam steps per row")->check(CLI::NonNegativeNumber);
  ablate->add_option("--out", aa.out, "CSV path (default: stdout)");
  ablate->add_option("--seed", aa.seed, "Override the initialization seed");
  ablate->add_option("--log-every", aa.log_every, "Log every N steps to stderr (0: off)")->check(CLI::NonNegativeNumber);

  InferArgs ia;
  CLI::App* infer = app.add_subcommand("infer", "Write per-keypoint PGM heatmaps and keypoint JSON");
  infer->add_option("--ckpt", ia.ckpt, "Checkpoint path")->required();
  auto* image_opt = infer->add_option("--image", ia.image, "Plain PPM (P3) input image");
  auto* synth_opt = infer->add_option("--synthetic", ia.synthetic, "Index of a synthetic sample instead of an image");
  image_opt->excludes(synth_opt);
  infer->add_option("--out", ia.out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    if (infer->parsed() && ia.image.empty() && !ia.synthetic) {
      throw CLI::RequiredError("--image or --synthetic");
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (train->parsed()) return cmd_train(ta, out, err);
    if (eval->parsed()) return cmd_eval(ea, out, err);
    if (ablate->parsed()) return cmd_ablate(aa, out, err);
    return cmd_infer(ia, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace gapose::cli
