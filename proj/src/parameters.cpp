// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "mtl/errors.hpp"

namespace mtl {

Tensor& ParameterSet::add(const std::string& path, Tensor init) {
  auto [it, inserted] = tensors_.emplace(path, std::move(init));
  if (!inserted) throw ConfigError("duplicate parameter path '" + path + "'");
  return it->second;
}

Tensor& ParameterSet::at(const std::string& path) {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw LookupError("no parameter '" + path + "'");
  return it->second;
}

const Tensor& ParameterSet::at(const std::string& path) const {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw LookupError("no parameter '" + path + "'");
  return it->second;
}

std::size_t ParameterSet::numel() const { return numel(""); }

std::size_t ParameterSet::numel(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& [path, t] : tensors_) {
    if (path.compare(0, prefix.size(), prefix) == 0) total += t.size();
  }
  return total;
}

std::vector<std::string> ParameterSet::paths() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& kv : tensors_) out.push_back(kv.first);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& kv : tensors_) kv.second.zero_grad();
}

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : t.data()) v = (2.0 * ad::uniform01(rng) - 1.0) * bound;
  return t;
}

namespace {

double evaluate(const LossBuilder& f, std::uint64_t seed) {
  ad::Tape tape(seed);
  ad::Var loss = f(tape);
  if (loss.value().size() != 1) throw UsageError("finite_diff_check: loss is not a scalar");
  return loss.value()[0];
}

}  // namespace

GradcheckReport finite_diff_check(const LossBuilder& f, ParameterSet& params, double eps, std::uint64_t tape_seed) {
  const double base = evaluate(f, tape_seed);
  if (evaluate(f, tape_seed) != base) throw DeterminismError("finite_diff_check: loss differs between identical evaluations");

  params.zero_grad();
  {
    ad::Tape tape(tape_seed);
    ad::Var loss = f(tape);
    tape.backward(loss);
  }

  GradcheckReport report;
  for (auto& [path, tensor] : params) {
    GradcheckEntry entry{path, tensor.size(), 0.0, 0.0};
    std::vector<double> analytic(tensor.size(), 0.0);
    if (tensor.has_grad()) std::copy(tensor.grad().begin(), tensor.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + eps;
      const double up = evaluate(f, tape_seed);
      tensor[i] = saved - eps;
      const double down = evaluate(f, tape_seed);
      tensor[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(analytic[i]));
    }
    if (report.worst_path.empty() || entry.max_rel_error > report.worst) {
      report.worst = entry.max_rel_error;
      report.worst_path = path;
    }
    report.entries.push_back(std::move(entry));
  }
  params.zero_grad();
  return report;
}

}  // namespace mtl
