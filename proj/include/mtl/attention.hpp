// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

// Scaled dot-product and multi-head self-attention with causal masking.
//
// All functions take a row-stacked batch: x is [(B*n) x d_x] holding B
// sequences of length n = mask.size(). Every sequence is attended
// independently.

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mtl/autodiff.hpp"
#include "mtl/parameters.hpp"

namespace mtl {

// Lower-triangular n x n mask: position i may attend to j iff j <= i.
class CausalMask {
 public:
  explicit CausalMask(std::size_t n);
  std::size_t size() const { return n_; }
  bool allowed(std::size_t i, std::size_t j) const { return j <= i; }
  std::vector<std::vector<bool>> matrix() const;

 private:
  std::size_t n_;
};

// Views into a ParameterSet. Head h owns query/key/value projections of width
// head_width() = d_out / heads; w_multi maps the concatenated heads to d_out.
struct AttentionParams {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t heads = 0;
  std::vector<Tensor*> wq, wk, wv;
  Tensor* w_multi = nullptr;

  std::size_t head_width() const { return d_out / heads; }

  // Registers "<prefix>/head/<h>/{wq,wk,wv}" and "<prefix>/w_multi".
  static AttentionParams create(ParameterSet& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                                std::size_t heads, std::mt19937_64& rng);
  // Rebinds to tensors already present in `params` under `prefix`.
  static AttentionParams bind(ParameterSet& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                              std::size_t heads);
  static std::size_t count(std::size_t d_in, std::size_t d_out, std::size_t heads);
};

// e_ij = (x_i W^Q)(x_j W^K)^T / sqrt(d_k) for one head, stacked [(B*n) x n].
ad::Var attention_scores(ad::Var x, const AttentionParams& p, std::size_t head, std::size_t seq_len);
// Causal masking followed by a row softmax; masked weights are exactly zero.
ad::Var masked_softmax(ad::Var scores, const CausalMask& mask);
// z_i = sum_j alpha_ij (x_j W^V) for one head.
ad::Var attend(ad::Var alpha, ad::Var x, const AttentionParams& p, std::size_t head, std::size_t seq_len);
// Heads computed independently, concatenated in head order, projected by W^multi.
// Dropout applies to the attention weights of each head.
ad::Var multi_head_attention(ad::Var x, const AttentionParams& p, const CausalMask& mask, double dropout_rate,
                             bool training);

}  // namespace mtl
