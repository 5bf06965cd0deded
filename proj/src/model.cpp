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

#include "gapose/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <vector>

#include "gapose/errors.hpp"
#include "gapose/kernels.hpp"

namespace gapose::model {

PoseModel::PoseModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const nn::Initializer root(params_, rng);
  if (config_.toggles.glace) {
    glace_.emplace(root.scope("stem"), 3, config_.stem_width);
  } else {
    plain_.emplace(root.scope("stem"), 3, config_.stem_width);
  }
  backbone_ = blocks::Backbone(root.scope("backbone"), config_);
  head_ = head::FusionHead(root.scope("head"), config_);
  bank_ = losses::TokenBank(root.scope("tokens"), config_.token_count, config_.token_dim, config_.fusion_width,
                            config_.num_keypoints, config_.heatmap_h(), config_.heatmap_w());
}

ForwardResult PoseModel::forward(const Context& ctx, const Var& images) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != config_.input_h || s[3] != config_.input_w) {
    throw ShapeError("model: expected images [B,3," + std::to_string(config_.input_h) + "," +
                     std::to_string(config_.input_w) + "], got " + to_string(s));
  }
  ForwardResult r;
  r.stem = glace_ ? glace_->forward(ctx, images) : plain_->forward(ctx, images);
  r.pyramid = backbone_.forward(ctx, r.stem);
  r.head = head_.forward(ctx, r.pyramid);
  const Shape& rs = r.head.refined.shape();
  r.pooled = ops::reshape(ops::mean_axis(ops::reshape(r.head.refined, {rs[0], rs[1], rs[2] * rs[3]}), 2),
                          {rs[0], rs[1]});
  return r;
}

Tensor PoseModel::predict(const Tensor& images) const {
  autograd::Graph g(false);
  const Context ctx{g, false};
  return forward(ctx, g.constant(images)).heatmap().value();
}

std::int64_t count_params(const PoseModel& model) { return model.parameters().count_trainable(); }

Adam::Adam(AdamOptions options) : options_(options) {}

void Adam::step(nn::ParameterSet& params) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const kernels::AdamCoefficients c{options_.lr,
                                    options_.beta1,
                                    options_.beta2,
                                    options_.eps,
                                    1.0 - std::pow(options_.beta1, t),
                                    1.0 - std::pow(options_.beta2, t)};
  const kernels::KernelTable& k = kernels::active();
  for (Parameter* p : params.trainable()) {
    auto it = moments_.find(p->name);
    if (it == moments_.end()) {
      it = moments_.emplace(p->name, Moments{Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())}).first;
    }
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    k.adam(p->value.size(), c, p->value.data(), p->grad.data(), it->second.m.data(), it->second.v.data());
  }
}

double StepReport::term(std::string_view name) const {
  for (const auto& t : terms) {
    if (t.name == name) return t.value;
  }
  throw StateError("loss term '" + std::string(name) + "' not present");
}

namespace {

struct LossGraph {
  StepReport report;
  Var total;
};

LossGraph build_loss(const PoseModel& model, const Context& ctx, const Batch& batch, const PoseModel* teacher) {
  const ForwardResult fw = model.forward(ctx, ctx.graph.constant(batch.images));
  std::optional<Tensor> teacher_heatmap;
  if (teacher) {
    teacher_heatmap = teacher->predict(batch.images);
    if (teacher_heatmap->shape() != fw.heatmap().shape()) {
      throw ConfigError("teacher_checkpoint: teacher heatmaps " + to_string(teacher_heatmap->shape()) +
                        " do not match student " + to_string(fw.heatmap().shape()));
    }
  }
  losses::LossInputs in{fw.heatmap(), &batch.heatmaps, &batch.visibility, nullptr, nullptr, {}};
  in.teacher = teacher_heatmap ? &*teacher_heatmap : nullptr;
  in.bank = &model.token_bank();
  in.pooled = fw.pooled;
  losses::LossReport lr = losses::total_loss(ctx, in, model.config().loss_weights);
  LossGraph out;
  out.total = lr.total;
  out.report.total = lr.total_value();
  out.report.terms = std::move(lr.terms);
  return out;
}

}  // namespace

StepReport train_step(PoseModel& model, Adam& optimizer, const Batch& batch, const PoseModel* teacher) {
  autograd::Graph g(true);
  const Context ctx{g, true};
  LossGraph lg = build_loss(model, ctx, batch, teacher);
  if (!std::isfinite(lg.report.total)) {
    throw TrainingDiverged("training diverged: loss is " + std::to_string(lg.report.total) + " at step " +
                           std::to_string(optimizer.steps() + 1));
  }
  nn::ParameterSet& params = model.parameters();
  params.zero_grad();
  g.backward(lg.total);
  optimizer.step(params);
  params.zero_grad();
  return lg.report;
}

StepReport evaluate_loss(const PoseModel& model, const Batch& batch, bool training, const PoseModel* teacher) {
  autograd::Graph g(false);
  const Context ctx{g, training};
  return build_loss(model, ctx, batch, teacher).report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

// The on-disk format is little-endian; so is every supported host.
static_assert(std::endian::native == std::endian::little);

constexpr char kMagic[4] = {'G', 'A', 'P', 'W'};
constexpr std::uint32_t kVersion = 1;
const std::string kStepName = "optim.step";
const std::string kMomentM = "optim.adam.m.";
const std::string kMomentV = "optim.adam.v.";

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

void put_f64(std::string& buf, double d) { put(buf, std::bit_cast<std::uint64_t>(d)); }

void put_tensor(std::string& buf, const std::string& name, const Tensor& t) {
  put(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put(buf, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put(buf, static_cast<std::uint64_t>(d));
  for (double v : t.values()) put_f64(buf, v);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  bool done() const { return pos_ == data_.size(); }

  template <class T>
  T get(const std::string& what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const std::string& what) {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint truncated while reading " + what);
  }

  std::string data_;
  std::size_t pos_ = 0;
};

struct ParsedFile {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

ParsedFile parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw FormatError("'" + path + "' is not a GAPW checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto json_len = r.get<std::uint64_t>("config length");
  ParsedFile out;
  try {
    out.config = nlohmann::json::parse(r.bytes(json_len, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON (") + e.what() + ")");
  }
  std::set<std::string> seen;
  while (!r.done()) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    const std::string what = "tensor '" + name + "'";
    const auto rank = r.get<std::uint32_t>(what + " rank");
    if (rank > 8) throw FormatError(what + ": implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.get<std::uint64_t>(what + " dims");
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw FormatError(what + ": invalid dimension " + std::to_string(d));
      shape.push_back(static_cast<std::int64_t>(d));
      count *= d;
      if (count > (std::uint64_t{1} << 40)) throw FormatError(what + ": implausible size");
    }
    std::string payload = r.bytes(static_cast<std::size_t>(count * 8), what + " payload");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, payload.data() + i * 8, 8);
      t[i] = std::bit_cast<double>(bits);
    }
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "' in checkpoint");
    out.tensors.emplace_back(name, std::move(t));
  }
  return out;
}

// Validates names and shapes against the model, then commits. Nothing is
// written to the model or optimizer unless every check passes.
void apply(PoseModel& model, ParsedFile& file, Adam* optimizer) {
  std::map<std::string, Tensor*> by_name;
  for (auto& [name, t] : file.tensors) by_name[name] = &t;

  auto expect_shape = [](const std::string& name, const Tensor& got, const Shape& want) {
    if (got.shape() != want) {
      throw FormatError("tensor '" + name + "' has shape " + to_string(got.shape()) + " in checkpoint, model expects " +
                        to_string(want));
    }
  };

  std::set<std::string> known;
  for (const Parameter* p : model.parameters().all()) {
    known.insert(p->name);
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("tensor '" + p->name + "' missing from checkpoint");
    expect_shape(p->name, *it->second, p->value.shape());
  }

  const bool has_optim = by_name.contains(kStepName);
  std::int64_t step = 0;
  if (has_optim) {
    const Tensor& s = *by_name[kStepName];
    if (s.size() != 1 || s[0] < 0 || s[0] != std::floor(s[0])) throw FormatError("tensor 'optim.step' is invalid");
    step = static_cast<std::int64_t>(s[0]);
    known.insert(kStepName);
  }
  for (const auto& [name, t] : file.tensors) {
    if (known.contains(name)) continue;
    const bool is_m = name.starts_with(kMomentM), is_v = name.starts_with(kMomentV);
    if (!has_optim || !(is_m || is_v)) throw FormatError("unexpected tensor '" + name + "' in checkpoint");
    const std::string pname = name.substr(kMomentM.size());
    const Parameter* p = model.parameters().find(pname);
    if (p == nullptr || !p->trainable) throw FormatError("tensor '" + name + "' refers to no trainable parameter");
    expect_shape(name, t, p->value.shape());
    const std::string twin = (is_m ? kMomentV : kMomentM) + pname;
    if (!by_name.contains(twin)) throw FormatError("tensor '" + twin + "' missing from checkpoint");
  }

  for (Parameter* p : model.parameters().all()) {
    p->value = std::move(*by_name[p->name]);
    p->zero_grad();
  }
  if (optimizer && has_optim) {
    optimizer->moments().clear();
    optimizer->set_steps(step);
    for (auto& [name, t] : file.tensors) {
      if (name.starts_with(kMomentM)) {
        const std::string pname = name.substr(kMomentM.size());
        optimizer->moments()[pname] = Adam::Moments{std::move(t), std::move(*by_name[kMomentV + pname])};
      }
    }
  }
}

}  // namespace

void save_checkpoint(const PoseModel& model, const std::string& path, const Adam* optimizer) {
  std::string buf(kMagic, 4);
  put(buf, kVersion);
  const std::string cfg = to_json(model.config()).dump();
  put(buf, static_cast<std::uint64_t>(cfg.size()));
  buf += cfg;
  for (const Parameter* p : model.parameters().all()) put_tensor(buf, p->name, p->value);
  if (optimizer) {
    put_tensor(buf, kStepName, Tensor::scalar(static_cast<double>(optimizer->steps())));
    for (const auto& [name, mom] : optimizer->moments()) {
      put_tensor(buf, kMomentM + name, mom.m);
      put_tensor(buf, kMomentV + name, mom.v);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  ParsedFile file = parse_file(path);
  ModelConfig config;
  try {
    config = config_from_json(file.config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config rejected: ") + e.what());
  }
  Checkpoint ck;
  auto model = std::make_unique<PoseModel>(config);
  Adam optimizer(AdamOptions{config.learning_rate});
  apply(*model, file, &optimizer);
  ck.model = std::move(model);
  if (optimizer.steps() > 0 || !optimizer.moments().empty()) ck.optimizer = std::move(optimizer);
  return ck;
}

void load_weights(PoseModel& model, const std::string& path, Adam* optimizer) {
  ParsedFile file = parse_file(path);
  apply(model, file, optimizer);
}

}  // namespace gapose::model
