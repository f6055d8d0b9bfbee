// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/sharing.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mtl/errors.hpp"

namespace mtl {

namespace {

const char* kSharedPrefix = "shared/attn";

std::string fusion_path(std::size_t task, Scheme scheme, std::size_t k) {
  return TaskPipeline::prefix(task) + (scheme == Scheme::Global ? "/fusion/" : "/bridge/") + std::to_string(k);
}

std::size_t fusion_count(const ModelConfig& c) {
  if (c.scheme == Scheme::Global) return c.dims.layers;
  if (c.scheme == Scheme::Hybrid) return c.dims.layers > 0 ? c.dims.layers - 1 : 0;
  return 0;
}

void validate(const ModelConfig& c) {
  if (c.num_tasks == 0) throw ConfigError("model needs at least one task");
  if (c.dims.d_model == 0 || c.dims.d_ff == 0 || c.dims.layers == 0 || c.dims.max_len == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (c.dims.heads == 0 || c.dims.d_model % c.dims.heads != 0) {
    throw ConfigError(std::to_string(c.dims.heads) + " heads do not divide model width " +
                      std::to_string(c.dims.d_model));
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

}  // namespace

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::Global:
      return "global";
    case Scheme::Hybrid:
      return "hybrid";
    case Scheme::NoShare:
      return "noshare";
  }
  return "?";
}

Scheme parse_scheme(const std::string& name) {
  if (name == "global") return Scheme::Global;
  if (name == "hybrid") return Scheme::Hybrid;
  if (name == "noshare") return Scheme::NoShare;
  throw UsageError("unknown scheme '" + name + "' (expected global, hybrid or noshare)");
}

MultiTaskModel::MultiTaskModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  validate(config_);
  const ModelDims& dims = config_.dims;
  const std::size_t d = dims.d_model;
  positions_ = std::make_unique<Tensor>(sinusoidal_positions(dims.max_len, d));
  std::mt19937_64 rng(seed);
  if (config_.scheme != Scheme::NoShare) AttentionParams::create(params_, kSharedPrefix, d, d, dims.heads, rng);
  for (std::size_t m = 0; m < config_.num_tasks; ++m) {
    TaskPipeline::create(params_, m, dims, *positions_, rng);
    for (std::size_t k = 0; k < fusion_count(config_); ++k) {
      params_.add(fusion_path(m, config_.scheme, k), uniform_init({2 * d, d}, 2 * d, rng));
    }
  }
  bind();
}

MultiTaskModel::MultiTaskModel(const MultiTaskModel& other)
    : config_(other.config_), params_(other.params_), positions_(std::make_unique<Tensor>(*other.positions_)) {
  bind();
}

void MultiTaskModel::bind() {
  const ModelDims& dims = config_.dims;
  pipelines_.clear();
  fusion_.clear();
  shared_.reset();
  if (config_.scheme != Scheme::NoShare) {
    shared_ = AttentionParams::bind(params_, kSharedPrefix, dims.d_model, dims.d_model, dims.heads);
  }
  for (std::size_t m = 0; m < config_.num_tasks; ++m) {
    pipelines_.push_back(TaskPipeline::bind(params_, m, dims, *positions_));
    std::vector<Tensor*> fusions;
    for (std::size_t k = 0; k < fusion_count(config_); ++k) fusions.push_back(&params_.at(fusion_path(m, config_.scheme, k)));
    fusion_.push_back(std::move(fusions));
  }
}

void MultiTaskModel::check_task(std::size_t task) const {
  if (task >= config_.num_tasks) {
    throw LookupError("unknown task " + std::to_string(task) + " (model has " + std::to_string(config_.num_tasks) +
                      " tasks)");
  }
}

const TaskPipeline& MultiTaskModel::pipeline(std::size_t task) const {
  check_task(task);
  return pipelines_[task];
}

Tensor& MultiTaskModel::fusion(std::size_t task, std::size_t k) {
  check_task(task);
  if (k >= fusion_[task].size()) throw LookupError("no fusion matrix " + std::to_string(k) + " for task " + std::to_string(task));
  return *fusion_[task][k];
}

ad::Var MultiTaskModel::shared_attention(ad::Var z, const CausalMask& mask, bool training) const {
  ad::Var s = multi_head_attention(z, *shared_, mask, config_.dropout, training);
  return ad::dropout(s, config_.dropout, training);
}

ad::Var MultiTaskModel::forward(ad::Tape& tape, std::size_t task, const Tensor& inputs, std::size_t seq_len,
                                bool training) const {
  check_task(task);
  const TaskPipeline& tp = pipelines_[task];
  const CausalMask mask(seq_len);
  const double rate = config_.dropout;
  ad::Var z = embed(tape, inputs, seq_len, tp);

  switch (config_.scheme) {
    case Scheme::NoShare:
      for (const auto& layer : tp.layers) z = encoder_layer_forward(z, layer, mask, rate, training);
      break;
    case Scheme::Global: {
      const ad::Var s = shared_attention(z, mask, training);
      for (std::size_t k = 0; k < tp.layers.size(); ++k) {
        z = encoder_layer_forward(z, tp.layers[k], mask, rate, training);
        z = ad::matmul(ad::concat_features(z, s), tape.parameter(*fusion_[task][k]));
      }
      break;
    }
    case Scheme::Hybrid:
      z = encoder_layer_forward(z, tp.layers[0], mask, rate, training);
      for (std::size_t k = 1; k < tp.layers.size(); ++k) {
        const ad::Var s = shared_attention(z, mask, training);
        z = ad::matmul(ad::concat_features(z, s), tape.parameter(*fusion_[task][k - 1]));
        z = encoder_layer_forward(z, tp.layers[k], mask, rate, training);
      }
      break;
  }
  return project_output(z, tp);
}

std::vector<double> MultiTaskModel::predict_next(std::size_t task, std::span<const std::vector<double>> windows) const {
  check_task(task);
  if (windows.empty()) return {};
  const std::size_t n = windows.front().size();
  Tensor inputs({windows.size() * n, 1});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].size() != n) throw DimensionError("predict_next: windows differ in length");
    std::copy(windows[b].begin(), windows[b].end(), inputs.ptr() + b * n);
  }
  ad::Tape tape;
  const Tensor& out = forward(tape, task, inputs, n, false).value();
  std::vector<double> next(windows.size());
  for (std::size_t b = 0; b < windows.size(); ++b) next[b] = out[b * n + n - 1];
  return next;
}

std::vector<double> MultiTaskModel::predict_sequence(std::size_t task, std::span<const double> window) const {
  Tensor inputs({window.size(), 1}, std::vector<double>(window.begin(), window.end()));
  ad::Tape tape;
  const Tensor& out = forward(tape, task, inputs, window.size(), false).value();
  return {out.data().begin(), out.data().end()};
}

ParameterAudit MultiTaskModel::audit() const {
  ParameterAudit a;
  a.per_task.assign(config_.num_tasks, 0);
  for (const char* c : {"embed", "attention", "ffn", "norm", "output", "fusion", "bridge", "shared"}) a.per_component[c] = 0;
  for (const auto& [path, t] : params_) {
    a.total += t.size();
    if (path.rfind("shared/", 0) == 0) {
      a.shared += t.size();
      a.per_component["shared"] += t.size();
      continue;
    }
    // "task/<m>/<component>/..."
    const std::size_t first = path.find('/');
    const std::size_t second = path.find('/', first + 1);
    a.per_task.at(std::stoul(path.substr(first + 1, second - first - 1))) += t.size();
    const std::string rest = path.substr(second + 1);
    std::string component = rest.substr(0, rest.find('/'));
    if (component == "layer") {
      if (rest.find("/attn/") != std::string::npos) component = "attention";
      else if (rest.find("/ffn/") != std::string::npos) component = "ffn";
      else component = "norm";
    }
    a.per_component[component] += t.size();
  }
  return a;
}

std::size_t parameter_count(const ModelConfig& config) {
  const std::size_t d = config.dims.d_model;
  std::size_t per_task = TaskPipeline::count(config.dims) + fusion_count(config) * 2 * d * d;
  std::size_t total = config.num_tasks * per_task;
  if (config.scheme != Scheme::NoShare) total += AttentionParams::count(d, d, config.dims.heads);
  return total;
}

double parameter_mismatch(const ModelConfig& noshare, const ModelConfig& base) {
  const double n = static_cast<double>(parameter_count(noshare));
  double worst = 0.0;
  for (Scheme s : {Scheme::Global, Scheme::Hybrid}) {
    ModelConfig c = base;
    c.scheme = s;
    const double ref = static_cast<double>(parameter_count(c));
    worst = std::max(worst, std::abs(n - ref) / ref);
  }
  return worst;
}

ModelConfig matched_noshare(const ModelConfig& base) {
  ModelConfig best = base;
  best.scheme = Scheme::NoShare;
  double best_gap = parameter_mismatch(best, base);
  ModelConfig trial = best;
  for (std::size_t f = 1; f <= 8 * base.dims.d_ff + 64; ++f) {
    trial.dims.d_ff = f;
    const double gap = parameter_mismatch(trial, base);
    if (gap < best_gap) {
      best_gap = gap;
      best.dims.d_ff = f;
    }
  }
  return best;
}

}  // namespace mtl
