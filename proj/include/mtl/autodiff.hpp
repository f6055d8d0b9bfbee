// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-based reverse-mode differentiation over rank-1/rank-2 float64 tensors.
//
// A Tape records every operation in execution order, so the recording is
// already topologically sorted; backward() walks it once in reverse. Model
// parameters enter a tape through Tape::parameter(), which binds the leaf to
// the caller's Tensor so that backward() accumulates straight into its grad
// buffer. Binding the same Tensor twice yields the same leaf, so a block
// reused several times in one graph (the shared attention layer) receives
// the sum of all its contributions.
//
// Shapes must match exactly. Nothing broadcasts implicitly; add_bias() is the
// one explicit row-broadcast.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is being propagated.
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(std::uint64_t seed = 0) : rng_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor& param);
  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-allocated on first access.
  std::span<double> grad(std::size_t id);
  std::span<const double> grad(Var v) const { return nodes_[v.id].grad; }

  // Propagates d(loss)/d(node) for every node; parameter grads accumulate.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  // Parameters bound to this tape, in first-use order.
  const std::vector<Tensor*>& parameters() const { return params_; }
  std::mt19937_64& rng() { return rng_; }
  // Smallest |x| seen by relu on this tape (infinity if none).
  double relu_margin() const { return relu_margin_; }
  void note_relu_input(double x) { relu_margin_ = std::min(relu_margin_, std::abs(x)); }

 private:
  struct Node {
    Tensor value;
    Tensor* param = nullptr;
    std::vector<std::size_t> inputs;
    Backward backward;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::vector<Tensor*> params_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
  std::mt19937_64 rng_;
  double relu_margin_ = std::numeric_limits<double>::infinity();
  bool backward_done_ = false;
};

// Uniform double in [0, 1) from the top 53 bits of one engine draw.
double uniform01(std::mt19937_64& rng);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
// x[n x d] + bias[d] added to every row.
Var add_bias(Var x, Var bias);
Var softmax_rows(Var x);
Var concat_features(Var a, Var b);
Var concat_features(std::span<const Var> parts);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Inverted dropout; identity when !training or rate == 0.
Var dropout(Var x, double rate, bool training);
Var sum(Var x);
// Mean of squared differences, a scalar.
Var mse(Var pred, Var target);

// Sequence-batched attention primitives. Inputs stack B sequences of length
// `block` row-wise, so an [(B*block) x d] tensor holds B sequences.

// Per sequence: scores = q_b k_b^T * factor, stacked to [(B*block) x block].
Var block_scores(Var q, Var k, std::size_t block, double factor);
// Replaces entry (i, j) of each block with kMaskValue wherever j > i.
Var causal_mask(Var scores, std::size_t block);
// Per sequence: alpha_b v_b, stacked to [(B*block) x d_v].
Var block_attend(Var alpha, Var v, std::size_t block);

inline constexpr double kMaskValue = -1e30;

}  // namespace mtl::ad
