// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/parameters.hpp"
#include "mtl/sharing.hpp"

namespace mtl {

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 64;
  double max_grad_norm = 0.7;
  double decay_gamma = 0.95;
  // In epochs.
  double decay_step = 1.0;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double dropout = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // 0 = ceil(total training windows / batch_size).
  std::size_t steps_per_epoch = 0;
  // 0 = no cap on the total number of steps.
  std::size_t max_steps = 0;

  void validate() const;
  // lr0 * gamma^floor(epoch / decay_step)
  double learning_rate_at(std::size_t epoch) const;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  std::uint64_t steps = 0;
};

struct OptimizerState {
  std::map<std::string, AdamMoments> moments;
  std::uint64_t step = 0;
  double learning_rate = 0.0;
};

// Mean of squared differences.
double l2_loss(std::span<const double> pred, std::span<const double> target);

// Index drawn with probability proportional to counts[m].
std::size_t sample_task(std::mt19937_64& rng, std::span<const std::size_t> counts);

// Scales every gradient by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns the factor applied (1 when no clipping happened).
double clip_grad_norm(ParameterSet& params, double max_norm);

// Decoupled weight decay Adam over the listed parameters only. Moments of
// parameters outside the list are left untouched.
void adamw_update(ParameterSet& params, std::span<const std::string> paths, const TrainConfig& config,
                  OptimizerState& state);

struct Batch {
  std::size_t task = 0;
  std::size_t seq_len = 0;
  Tensor inputs;   // [(B*seq_len) x 1]
  Tensor targets;  // [(B*seq_len) x 1]
};

// Windows [first, first + count) of a normalized segment, stacked.
Batch make_batch(std::size_t task, std::span<const double> segment, std::size_t seq_len, std::size_t first,
                 std::size_t count);

// Forward, loss, backward, clip, AdamW, zero grads. Returns the loss measured
// before the update. Throws DivergenceError on a non-finite loss.
double train_step(MultiTaskModel& model, const Batch& batch, const TrainConfig& config, OptimizerState& state,
                  std::uint64_t tape_seed);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t task = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double validation_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

// Everything the loop needs to continue exactly where it stopped.
struct TrainProgress {
  OptimizerState optimizer;
  std::mt19937_64 rng;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed steps
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

// Mean squared one-step error over every position of every window of the
// split, pooled across tasks, on normalized values.
double split_loss(const MultiTaskModel& model, const PreparedDataset& data, Split split, std::size_t window);

// Stochastic task looping: sample a task, train one consecutive mini-batch
// of its windows, update, repeat. The learning rate decays by gamma every
// decay_step epochs and validation loss is measured after each epoch.
class Trainer {
 public:
  // Called after each epoch; `improved` marks a new best validation loss.
  using EpochHook = std::function<void(const Trainer&, const EpochRecord&, bool improved)>;

  Trainer(MultiTaskModel& model, const PreparedDataset& data, TrainConfig config, std::size_t window);

  TrainingLog run(const EpochHook& on_epoch = {});

  const TrainProgress& progress() const { return progress_; }
  void restore(TrainProgress progress) { progress_ = std::move(progress); }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  const TrainConfig& config() const { return config_; }
  const MultiTaskModel& model() const { return model_; }

 private:
  MultiTaskModel& model_;
  const PreparedDataset& data_;
  TrainConfig config_;
  std::size_t window_;
  std::vector<std::size_t> window_counts_;
  std::size_t steps_per_epoch_ = 0;
  TrainProgress progress_;
};

}  // namespace mtl
