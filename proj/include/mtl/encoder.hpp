// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mtl/attention.hpp"
#include "mtl/autodiff.hpp"
#include "mtl/parameters.hpp"

namespace mtl {

struct ModelDims {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_ff = 128;
  std::size_t max_len = 512;
};

// Non-trainable sinusoidal table:
//   pe[t, 2i]   = sin(t / 10000^(2i / d))
//   pe[t, 2i+1] = cos(t / 10000^(2i / d))
Tensor sinusoidal_positions(std::size_t max_len, std::size_t d_model);

struct EncoderLayerParams {
  AttentionParams attn;
  Tensor* w1 = nullptr;
  Tensor* b1 = nullptr;
  Tensor* w2 = nullptr;
  Tensor* b2 = nullptr;
  Tensor* norm1_gain = nullptr;
  Tensor* norm1_bias = nullptr;
  Tensor* norm2_gain = nullptr;
  Tensor* norm2_bias = nullptr;

  static EncoderLayerParams create(ParameterSet& params, const std::string& prefix, const ModelDims& dims,
                                   std::mt19937_64& rng);
  static EncoderLayerParams bind(ParameterSet& params, const std::string& prefix, const ModelDims& dims);
  static std::size_t count(const ModelDims& dims);
};

// One task's private stack: scalar embedding, encoder layers, scalar head.
// All parameters live under "task/<id>/".
struct TaskPipeline {
  std::size_t task_id = 0;
  Tensor* w_in = nullptr;   // [1 x d]
  Tensor* b_in = nullptr;   // [d]
  std::vector<EncoderLayerParams> layers;
  Tensor* w_out = nullptr;  // [d x 1]
  Tensor* b_out = nullptr;  // [1]
  const Tensor* positions = nullptr;

  static std::string prefix(std::size_t task_id);
  static TaskPipeline create(ParameterSet& params, std::size_t task_id, const ModelDims& dims,
                             const Tensor& positions, std::mt19937_64& rng);
  static TaskPipeline bind(ParameterSet& params, std::size_t task_id, const ModelDims& dims, const Tensor& positions);
  static std::size_t count(const ModelDims& dims);
};

// inputs: [(B*n) x 1] scalars, B sequences of length seq_len. Returns
// x * W_in + b_in + pe[t] at every position t.
ad::Var embed(ad::Tape& tape, const Tensor& inputs, std::size_t seq_len, const TaskPipeline& tp);

// Post-norm encoder layer:
//   u   = LN(z + dropout(MHA(z)))
//   out = LN(u + dropout(relu(u W1 + b1) W2 + b2))
ad::Var encoder_layer_forward(ad::Var z, const EncoderLayerParams& lp, const CausalMask& mask, double dropout_rate,
                              bool training);

// Per-position affine map to one scalar; row t predicts the value at t + 1.
ad::Var project_output(ad::Var z, const TaskPipeline& tp);

}  // namespace mtl
