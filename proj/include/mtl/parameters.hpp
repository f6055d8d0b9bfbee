// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mtl/autodiff.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

// Owns every trainable tensor of a model, keyed by a slash-separated path
// such as "task/0/layer/1/ffn/w1". Element addresses are stable for the
// lifetime of the set, so model code keeps plain Tensor pointers into it.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;

  Tensor& add(const std::string& path, Tensor init);
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  bool contains(const std::string& path) const { return tensors_.count(path) != 0; }

  std::size_t size() const { return tensors_.size(); }
  // Total scalar parameter count.
  std::size_t numel() const;
  // Scalar count over paths starting with `prefix`.
  std::size_t numel(const std::string& prefix) const;
  std::vector<std::string> paths() const;

  void zero_grad();

  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

 private:
  Map tensors_;
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) entries.
Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

struct GradcheckEntry {
  std::string path;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double worst = 0.0;
  std::string worst_path;

  bool passed(double tolerance) const { return worst < tolerance; }
};

// Builds a scalar loss on the given tape. Must be a pure function of the
// parameter values and the tape seed.
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

// Compares analytic gradients against central differences
// (f(p + eps) - f(p - eps)) / 2 eps for every element of every parameter.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// Each evaluation gets a fresh tape seeded with `tape_seed`.
GradcheckReport finite_diff_check(const LossBuilder& f, ParameterSet& params, double eps = 1e-5,
                                  std::uint64_t tape_seed = 0);

}  // namespace mtl
