// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/attention.hpp"

#include <cmath>

#include "mtl/errors.hpp"

namespace mtl {

CausalMask::CausalMask(std::size_t n) : n_(n) {
  if (n == 0) throw DimensionError("causal mask needs n >= 1");
}

std::vector<std::vector<bool>> CausalMask::matrix() const {
  std::vector<std::vector<bool>> m(n_, std::vector<bool>(n_, false));
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m[i][j] = true;
  }
  return m;
}

namespace {

void check_dims(std::size_t d_out, std::size_t heads) {
  if (heads == 0 || d_out % heads != 0) {
    throw ConfigError(std::to_string(heads) + " heads do not divide model width " + std::to_string(d_out));
  }
}

std::string head_path(const std::string& prefix, std::size_t h, const char* name) {
  return prefix + "/head/" + std::to_string(h) + "/" + name;
}

}  // namespace

AttentionParams AttentionParams::create(ParameterSet& params, const std::string& prefix, std::size_t d_in,
                                        std::size_t d_out, std::size_t heads, std::mt19937_64& rng) {
  check_dims(d_out, heads);
  const std::size_t dk = d_out / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    for (const char* name : {"wq", "wk", "wv"}) params.add(head_path(prefix, h, name), uniform_init({d_in, dk}, d_in, rng));
  }
  params.add(prefix + "/w_multi", uniform_init({heads * dk, d_out}, heads * dk, rng));
  return bind(params, prefix, d_in, d_out, heads);
}

AttentionParams AttentionParams::bind(ParameterSet& params, const std::string& prefix, std::size_t d_in,
                                      std::size_t d_out, std::size_t heads) {
  check_dims(d_out, heads);
  AttentionParams p;
  p.d_in = d_in;
  p.d_out = d_out;
  p.heads = heads;
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq.push_back(&params.at(head_path(prefix, h, "wq")));
    p.wk.push_back(&params.at(head_path(prefix, h, "wk")));
    p.wv.push_back(&params.at(head_path(prefix, h, "wv")));
  }
  p.w_multi = &params.at(prefix + "/w_multi");
  return p;
}

std::size_t AttentionParams::count(std::size_t d_in, std::size_t d_out, std::size_t heads) {
  check_dims(d_out, heads);
  return 3 * d_in * d_out + d_out * d_out;
}

ad::Var attention_scores(ad::Var x, const AttentionParams& p, std::size_t head, std::size_t seq_len) {
  ad::Tape& tape = *x.tape;
  ad::Var q = ad::matmul(x, tape.parameter(*p.wq.at(head)));
  ad::Var k = ad::matmul(x, tape.parameter(*p.wk.at(head)));
  // Scaled by the per-head key width.
  return ad::block_scores(q, k, seq_len, 1.0 / std::sqrt(static_cast<double>(p.head_width())));
}

ad::Var masked_softmax(ad::Var scores, const CausalMask& mask) {
  return ad::softmax_rows(ad::causal_mask(scores, mask.size()));
}

ad::Var attend(ad::Var alpha, ad::Var x, const AttentionParams& p, std::size_t head, std::size_t seq_len) {
  ad::Var v = ad::matmul(x, x.tape->parameter(*p.wv.at(head)));
  return ad::block_attend(alpha, v, seq_len);
}

ad::Var multi_head_attention(ad::Var x, const AttentionParams& p, const CausalMask& mask, double dropout_rate,
                             bool training) {
  if (x.cols() != p.d_in) {
    throw DimensionError("multi_head_attention: input width " + std::to_string(x.cols()) + " but parameters expect " +
                         std::to_string(p.d_in));
  }
  const std::size_t n = mask.size();
  std::vector<ad::Var> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    ad::Var alpha = masked_softmax(attention_scores(x, p, h, n), mask);
    alpha = ad::dropout(alpha, dropout_rate, training);
    heads.push_back(attend(alpha, x, p, h, n));
  }
  ad::Var joined = p.heads == 1 ? heads.front() : ad::concat_features(heads);
  return ad::matmul(joined, x.tape->parameter(*p.w_multi));
}

}  // namespace mtl
