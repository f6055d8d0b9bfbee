// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "mtl/errors.hpp"

namespace mtl {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (!(decay_gamma > 0.0)) throw ConfigError("decay_gamma must be positive");
  if (!(decay_step > 0.0)) throw ConfigError("decay_step must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  const double periods = std::floor(static_cast<double>(epoch) / decay_step);
  return learning_rate * std::pow(decay_gamma, periods);
}

double l2_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw DimensionError("l2_loss: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(target.size()));
  }
  if (pred.empty()) throw DimensionError("l2_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
  return total / static_cast<double>(pred.size());
}

std::size_t sample_task(std::mt19937_64& rng, std::span<const std::size_t> counts) {
  if (counts.empty()) throw ConfigError("sample_task: no tasks");
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw ConfigError("sample_task: every task is empty");
  // Integer draw keeps the choice exact and platform independent.
  std::uint64_t r = rng() % total;
  for (std::size_t m = 0; m < counts.size(); ++m) {
    if (r < counts[m]) return m;
    r -= counts[m];
  }
  return counts.size() - 1;
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& [path, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& [path, t] : params) {
    if (!t.has_grad()) continue;
    for (double& g : t.grad()) g *= factor;
  }
  return factor;
}

void adamw_update(ParameterSet& params, std::span<const std::string> paths, const TrainConfig& config,
                  OptimizerState& state) {
  const double lr = state.learning_rate;
  ++state.step;
  for (const std::string& path : paths) {
    Tensor& p = params.at(path);
    auto [it, fresh] = state.moments.try_emplace(path);
    AdamMoments& mom = it->second;
    if (fresh) {
      mom.m = Tensor(p.shape());
      mom.v = Tensor(p.shape());
    }
    ++mom.steps;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(mom.steps));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(mom.steps));
    const auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * g[i];
      mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * g[i] * g[i];
      p[i] -= lr * config.weight_decay * p[i];
      p[i] -= lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + config.adam_eps);
    }
  }
}

Batch make_batch(std::size_t task, std::span<const double> segment, std::size_t seq_len, std::size_t first,
                 std::size_t count) {
  if (seq_len == 0 || count == 0) throw ConfigError("make_batch: empty batch");
  if (first + count + seq_len > segment.size()) {
    throw DataError("make_batch: windows [" + std::to_string(first) + ", " + std::to_string(first + count) +
                    ") of length " + std::to_string(seq_len) + " overrun a segment of " +
                    std::to_string(segment.size()));
  }
  Batch b{task, seq_len, Tensor({count * seq_len, 1}), Tensor({count * seq_len, 1})};
  for (std::size_t w = 0; w < count; ++w) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      b.inputs[w * seq_len + t] = segment[first + w + t];
      b.targets[w * seq_len + t] = segment[first + w + t + 1];
    }
  }
  return b;
}

double train_step(MultiTaskModel& model, const Batch& batch, const TrainConfig& config, OptimizerState& state,
                  std::uint64_t tape_seed) {
  ParameterSet& params = model.params();
  double loss_value = 0.0;
  std::vector<std::string> touched;
  {
    ad::Tape tape(tape_seed);
    ad::Var loss;
    try {
      ad::Var pred = model.forward(tape, batch.task, batch.inputs, batch.seq_len, true);
      loss = ad::mse(pred, tape.constant(batch.targets));
    } catch (const NumericError& e) {
      throw DivergenceError(state.step, e.what());
    }
    loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) throw DivergenceError(state.step, "non-finite loss");
    tape.backward(loss);
    std::unordered_map<const Tensor*, const std::string*> names;
    for (const auto& [path, t] : params) names.emplace(&t, &path);
    for (const Tensor* t : tape.parameters()) touched.push_back(*names.at(t));
  }
  clip_grad_norm(params, config.max_grad_norm);
  adamw_update(params, touched, config, state);
  params.zero_grad();
  return loss_value;
}

double split_loss(const MultiTaskModel& model, const PreparedDataset& data, Split split, std::size_t window) {
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t m = 0; m < data.num_tasks(); ++m) {
    const auto seg = data.tasks[m].segment(split);
    if (seg.size() < window + 1) continue;
    const std::size_t windows = seg.size() - window;
    for (std::size_t first = 0; first < windows; first += kChunk) {
      const Batch b = make_batch(m, seg, window, first, std::min(kChunk, windows - first));
      ad::Tape tape;
      const Tensor& pred = model.forward(tape, m, b.inputs, window, false).value();
      for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - b.targets[i]) * (pred[i] - b.targets[i]);
      count += pred.size();
    }
  }
  if (count == 0) throw DataError("split '" + to_string(split) + "' has no windows");
  return total / static_cast<double>(count);
}

Trainer::Trainer(MultiTaskModel& model, const PreparedDataset& data, TrainConfig config, std::size_t window)
    : model_(model), data_(data), config_(std::move(config)), window_(window) {
  config_.validate();
  if (data_.num_tasks() != model_.num_tasks()) {
    throw ConfigError("dataset has " + std::to_string(data_.num_tasks()) + " tasks but the model expects " +
                      std::to_string(model_.num_tasks()));
  }
  std::size_t total = 0;
  for (const PreparedTask& t : data_.tasks) {
    const std::size_t n = t.split.train.size();
    if (n < window_ + 1) {
      throw DataError("task '" + t.task_id + "' training range (" + std::to_string(n) + ") is shorter than window + 1");
    }
    window_counts_.push_back(n - window_);
    total += n - window_;
  }
  steps_per_epoch_ =
      config_.steps_per_epoch ? config_.steps_per_epoch : (total + config_.batch_size - 1) / config_.batch_size;
  progress_.rng.seed(config_.seed);
  progress_.optimizer.learning_rate = config_.learning_rate_at(0);
}

TrainingLog Trainer::run(const EpochHook& on_epoch) {
  TrainingLog log;
  auto steps_left = [&] { return config_.max_steps == 0 || progress_.step < config_.max_steps; };
  while (progress_.epoch < config_.epochs && steps_left()) {
    const std::size_t epoch = progress_.epoch;
    progress_.optimizer.learning_rate = config_.learning_rate_at(epoch);
    for (std::size_t i = 0; i < steps_per_epoch_ && steps_left(); ++i) {
      const std::size_t m = sample_task(progress_.rng, window_counts_);
      const std::size_t count = std::min(config_.batch_size, window_counts_[m]);
      const std::size_t first = static_cast<std::size_t>(progress_.rng() % (window_counts_[m] - count + 1));
      const std::uint64_t tape_seed = progress_.rng();
      const Batch batch = make_batch(m, data_.tasks[m].segment(Split::Train), window_, first, count);
      double loss = 0.0;
      try {
        loss = train_step(model_, batch, config_, progress_.optimizer, tape_seed);
      } catch (const DivergenceError&) {
        throw DivergenceError(progress_.step, "non-finite loss on task " + std::to_string(m));
      }
      log.steps.push_back({progress_.step, epoch, m, loss, progress_.optimizer.learning_rate});
      ++progress_.step;
    }
    EpochRecord rec{epoch, split_loss(model_, data_, Split::Validation, window_), progress_.optimizer.learning_rate};
    log.epochs.push_back(rec);
    ++progress_.epoch;
    const bool improved = rec.validation_loss < progress_.best_validation;
    if (improved) {
      progress_.best_validation = rec.validation_loss;
      progress_.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(*this, rec, improved);
  }
  return log;
}

}  // namespace mtl
