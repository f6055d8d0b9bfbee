// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/encoder.hpp"

#include <cmath>

#include "mtl/errors.hpp"

namespace mtl {

Tensor sinusoidal_positions(std::size_t max_len, std::size_t d_model) {
  Tensor pe({max_len, d_model});
  for (std::size_t t = 0; t < max_len; ++t) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const std::size_t pair = c / 2;
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(pair) / static_cast<double>(d_model));
      pe.at(t, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

EncoderLayerParams EncoderLayerParams::create(ParameterSet& params, const std::string& prefix, const ModelDims& dims,
                                              std::mt19937_64& rng) {
  const std::size_t d = dims.d_model, f = dims.d_ff;
  AttentionParams::create(params, prefix + "/attn", d, d, dims.heads, rng);
  params.add(prefix + "/ffn/w1", uniform_init({d, f}, d, rng));
  params.add(prefix + "/ffn/b1", Tensor({f}));
  params.add(prefix + "/ffn/w2", uniform_init({f, d}, f, rng));
  params.add(prefix + "/ffn/b2", Tensor({d}));
  params.add(prefix + "/norm1/gain", Tensor({d}, 1.0));
  params.add(prefix + "/norm1/bias", Tensor({d}));
  params.add(prefix + "/norm2/gain", Tensor({d}, 1.0));
  params.add(prefix + "/norm2/bias", Tensor({d}));
  return bind(params, prefix, dims);
}

EncoderLayerParams EncoderLayerParams::bind(ParameterSet& params, const std::string& prefix, const ModelDims& dims) {
  EncoderLayerParams lp;
  lp.attn = AttentionParams::bind(params, prefix + "/attn", dims.d_model, dims.d_model, dims.heads);
  lp.w1 = &params.at(prefix + "/ffn/w1");
  lp.b1 = &params.at(prefix + "/ffn/b1");
  lp.w2 = &params.at(prefix + "/ffn/w2");
  lp.b2 = &params.at(prefix + "/ffn/b2");
  lp.norm1_gain = &params.at(prefix + "/norm1/gain");
  lp.norm1_bias = &params.at(prefix + "/norm1/bias");
  lp.norm2_gain = &params.at(prefix + "/norm2/gain");
  lp.norm2_bias = &params.at(prefix + "/norm2/bias");
  return lp;
}

std::size_t EncoderLayerParams::count(const ModelDims& dims) {
  const std::size_t d = dims.d_model, f = dims.d_ff;
  return AttentionParams::count(d, d, dims.heads) + (d * f + f) + (f * d + d) + 4 * d;
}

std::string TaskPipeline::prefix(std::size_t task_id) { return "task/" + std::to_string(task_id); }

TaskPipeline TaskPipeline::create(ParameterSet& params, std::size_t task_id, const ModelDims& dims,
                                  const Tensor& positions, std::mt19937_64& rng) {
  const std::string root = prefix(task_id);
  const std::size_t d = dims.d_model;
  params.add(root + "/embed/w", uniform_init({1, d}, 1, rng));
  params.add(root + "/embed/b", Tensor({d}));
  for (std::size_t k = 0; k < dims.layers; ++k) {
    EncoderLayerParams::create(params, root + "/layer/" + std::to_string(k), dims, rng);
  }
  params.add(root + "/output/w", uniform_init({d, 1}, d, rng));
  params.add(root + "/output/b", Tensor({1}));
  return bind(params, task_id, dims, positions);
}

TaskPipeline TaskPipeline::bind(ParameterSet& params, std::size_t task_id, const ModelDims& dims,
                                const Tensor& positions) {
  if (positions.cols() != dims.d_model) throw DimensionError("positional table width differs from model width");
  const std::string root = prefix(task_id);
  TaskPipeline tp;
  tp.task_id = task_id;
  tp.w_in = &params.at(root + "/embed/w");
  tp.b_in = &params.at(root + "/embed/b");
  for (std::size_t k = 0; k < dims.layers; ++k) {
    tp.layers.push_back(EncoderLayerParams::bind(params, root + "/layer/" + std::to_string(k), dims));
  }
  tp.w_out = &params.at(root + "/output/w");
  tp.b_out = &params.at(root + "/output/b");
  tp.positions = &positions;
  return tp;
}

std::size_t TaskPipeline::count(const ModelDims& dims) {
  return 2 * dims.d_model + dims.layers * EncoderLayerParams::count(dims) + dims.d_model + 1;
}

ad::Var embed(ad::Tape& tape, const Tensor& inputs, std::size_t seq_len, const TaskPipeline& tp) {
  const Tensor& pe = *tp.positions;
  if (seq_len > pe.rows()) {
    throw CapacityError("sequence length " + std::to_string(seq_len) + " exceeds positional capacity " +
                        std::to_string(pe.rows()));
  }
  if (inputs.cols() != 1 || seq_len == 0 || inputs.rows() % seq_len != 0) {
    throw DimensionError("embed: inputs " + shape_str(inputs.shape()) + " are not a stack of length-" +
                         std::to_string(seq_len) + " scalar sequences");
  }
  const std::size_t rows = inputs.rows(), d = pe.cols();
  Tensor tiled({rows, d});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r % seq_len;
    for (std::size_t c = 0; c < d; ++c) tiled.at(r, c) = pe.at(t, c);
  }
  ad::Var x = tape.constant(inputs);
  ad::Var e = ad::add_bias(ad::matmul(x, tape.parameter(*tp.w_in)), tape.parameter(*tp.b_in));
  return ad::add(e, tape.constant(std::move(tiled)));
}

ad::Var encoder_layer_forward(ad::Var z, const EncoderLayerParams& lp, const CausalMask& mask, double dropout_rate,
                              bool training) {
  ad::Tape& tape = *z.tape;
  ad::Var attn = ad::dropout(multi_head_attention(z, lp.attn, mask, dropout_rate, training), dropout_rate, training);
  ad::Var u = ad::layer_norm(ad::add(z, attn), tape.parameter(*lp.norm1_gain), tape.parameter(*lp.norm1_bias));
  ad::Var hidden = ad::relu(ad::add_bias(ad::matmul(u, tape.parameter(*lp.w1)), tape.parameter(*lp.b1)));
  ad::Var ffn = ad::add_bias(ad::matmul(hidden, tape.parameter(*lp.w2)), tape.parameter(*lp.b2));
  ffn = ad::dropout(ffn, dropout_rate, training);
  return ad::layer_norm(ad::add(u, ffn), tape.parameter(*lp.norm2_gain), tape.parameter(*lp.norm2_bias));
}

ad::Var project_output(ad::Var z, const TaskPipeline& tp) {
  ad::Tape& tape = *z.tape;
  return ad::add_bias(ad::matmul(z, tape.parameter(*tp.w_out)), tape.parameter(*tp.b_out));
}

}  // namespace mtl
