// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mtl/attention.hpp"
#include "mtl/autodiff.hpp"
#include "mtl/tensor.hpp"

namespace mtl::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Builds a scalar from `inputs` bound as parameters of a fresh tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Worst elementwise relative error between tape gradients and central
// differences computed here, independently of the library's checker.
inline double max_grad_error(const ScalarFn& f, std::vector<Tensor>& inputs, double eps = 1e-5) {
  auto eval = [&] {
    ad::Tape tape(0);
    std::vector<ad::Var> vars;
    for (Tensor& t : inputs) vars.push_back(tape.parameter(t));
    return f(tape, vars).value()[0];
  };
  for (Tensor& t : inputs) t.zero_grad();
  {
    ad::Tape tape(0);
    std::vector<ad::Var> vars;
    for (Tensor& t : inputs) vars.push_back(tape.parameter(t));
    tape.backward(f(tape, vars));
  }
  double worst = 0.0;
  for (Tensor& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = eval();
      t[i] = saved - eps;
      const double down = eval();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8}));
    }
  }
  return worst;
}

// sum(x * w) for a fixed random w, so every output element matters.
inline ad::Var weighted_sum(ad::Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(x, x.tape->constant(random_tensor(x.shape(), rng))));
}

// Loop-based references written straight from the formulas.
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  }
  return m;
}

inline Mat ref_matmul(const Mat& a, const Tensor& w) {
  Mat out(a.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < w.rows(); ++k) {
      for (std::size_t j = 0; j < w.cols(); ++j) out[i][j] += a[i][k] * w.at(k, j);
    }
  }
  return out;
}

inline Mat ref_add_bias(Mat a, const Tensor& b) {
  for (auto& row : a) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  return a;
}

inline Mat ref_add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }
  return a;
}

inline Mat ref_concat(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i].insert(a[i].end(), b[i].begin(), b[i].end());
  return a;
}

inline Mat ref_layer_norm(Mat a, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  for (auto& row : a) {
    const double d = static_cast<double>(row.size());
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v / d;
    for (double v : row) var += (v - mean) * (v - mean) / d;
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = gain[j] * (row[j] - mean) / std::sqrt(var + eps) + bias[j];
  }
  return a;
}

// Causal multi-head attention over one sequence.
inline Mat ref_mha(const Mat& x, const AttentionParams& p) {
  const std::size_t n = x.size(), dk = p.head_width();
  Mat concat(n, std::vector<double>(p.heads * dk, 0.0));
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Mat q = ref_matmul(x, *p.wq[h]), k = ref_matmul(x, *p.wk[h]), v = ref_matmul(x, *p.wv[h]);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> e(i + 1);
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i][c] * k[j][c];
        e[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, e[j]);
      }
      double z = 0.0;
      for (double& w : e) z += (w = std::exp(w - mx));
      for (std::size_t c = 0; c < dk; ++c) {
        for (std::size_t j = 0; j <= i; ++j) concat[i][h * dk + c] += e[j] / z * v[j][c];
      }
    }
  }
  return ref_matmul(concat, *p.w_multi);
}

}  // namespace mtl::test
