// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-task forecaster: task-private encoder stacks plus one task-invariant
// multi-head attention block that every task reads from and trains.
//
//   global   s = SharedMHA(embed(x)) is computed once. After every encoder
//            layer k the private output is fused as [z_k | s] W^O_k, with
//            W^O_k of shape 2d x d.
//   hybrid   after encoder layer k < K the shared block re-reads z_k:
//            s_k = SharedMHA(z_k), and layer k+1 consumes [z_k | s_k] P_k,
//            with P_k of shape 2d x d restoring the model width.
//   noshare  independent pipelines, no shared block.
//
// Parameter layout: "shared/attn/..." for the shared block and
// "task/<m>/..." for everything private to task m (including W^O and P).

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtl/attention.hpp"
#include "mtl/autodiff.hpp"
#include "mtl/encoder.hpp"
#include "mtl/parameters.hpp"

namespace mtl {

enum class Scheme { Global, Hybrid, NoShare };

std::string to_string(Scheme scheme);
// Accepts "global", "hybrid" or "noshare".
Scheme parse_scheme(const std::string& name);

struct ModelConfig {
  Scheme scheme = Scheme::Global;
  std::size_t num_tasks = 1;
  ModelDims dims;
  double dropout = 0.1;
};

struct ParameterAudit {
  std::size_t total = 0;
  std::size_t shared = 0;
  std::vector<std::size_t> per_task;
  // embed, attention, ffn, norm, output, fusion, bridge, shared
  std::map<std::string, std::size_t> per_component;
};

class MultiTaskModel {
 public:
  MultiTaskModel(const ModelConfig& config, std::uint64_t seed);
  MultiTaskModel(const MultiTaskModel& other);
  MultiTaskModel& operator=(const MultiTaskModel&) = delete;
  MultiTaskModel(MultiTaskModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  Scheme scheme() const { return config_.scheme; }
  std::size_t num_tasks() const { return config_.num_tasks; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  const TaskPipeline& pipeline(std::size_t task) const;
  const AttentionParams* shared() const { return shared_ ? &*shared_ : nullptr; }
  // Global: W^O of layer `k`. Hybrid: P of boundary k -> k+1.
  Tensor& fusion(std::size_t task, std::size_t k);

  // inputs: [(B*n) x 1] normalized scalars, B windows of length seq_len, all
  // from `task`. Returns [(B*n) x 1] one-step-ahead predictions.
  ad::Var forward(ad::Tape& tape, std::size_t task, const Tensor& inputs, std::size_t seq_len, bool training) const;

  // Inference (dropout off) over equal-length windows; returns, per window,
  // the prediction made at its final position.
  std::vector<double> predict_next(std::size_t task, std::span<const std::vector<double>> windows) const;
  // Prediction at every position of one window.
  std::vector<double> predict_sequence(std::size_t task, std::span<const double> window) const;

  ParameterAudit audit() const;

 private:
  void bind();
  void check_task(std::size_t task) const;
  ad::Var shared_attention(ad::Var z, const CausalMask& mask, bool training) const;

  ModelConfig config_;
  ParameterSet params_;
  std::unique_ptr<Tensor> positions_;
  std::vector<TaskPipeline> pipelines_;
  std::optional<AttentionParams> shared_;
  std::vector<std::vector<Tensor*>> fusion_;
};

// Closed-form parameter count of a model built from `config`.
std::size_t parameter_count(const ModelConfig& config);

// No-share configuration with d_ff widened so its parameter count sits as
// close as possible to both sharing schemes built from `base` (minimizes the
// larger of the two relative gaps).
ModelConfig matched_noshare(const ModelConfig& base);

// max over the sharing schemes of |n(noshare) - n(s)| / n(s).
double parameter_mismatch(const ModelConfig& noshare, const ModelConfig& base);

}  // namespace mtl
