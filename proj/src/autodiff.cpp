// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "mtl/errors.hpp"

namespace mtl::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(std::span<double> d, std::size_t r, std::size_t c) {
  return MatMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMatMap as_mat(std::span<const double> d, std::size_t r, std::size_t c) {
  return ConstMatMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMatMap as_mat(const Tensor& t) { return as_mat(t.data(), t.rows(), t.cols()); }

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw UsageError("operands belong to different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank2(const char* op, Var a) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

void require_blocks(const char* op, Var a, std::size_t block) {
  require_rank2(op, a);
  if (block == 0 || a.rows() % block != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(a.rows()) +
                         " rows are not a whole number of length-" + std::to_string(block) + " sequences");
  }
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& param) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return Var{this, it->second};
  Node n;
  n.param = &param;
  n.requires_grad = true;
  Var v = push(std::move(n));
  param_ids_.emplace(&param, v.id);
  params_.push_back(&param);
  return v;
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param ? *n.param : n.value;
}

std::span<double> Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("backward: loss belongs to a different tape");
  if (value(loss.id).size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id).shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.param) {
      auto pg = n.param->grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  as_mat(out.data(), m, n).noalias() = as_mat(a.value()) * as_mat(b.value());
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape& t, std::size_t self) {
    auto g = as_mat(t.grad(self), m, n);
    if (t.requires_grad(a.id)) as_mat(t.grad(a.id), m, k).noalias() += g * as_mat(t.value(b.id)).transpose();
    if (t.requires_grad(b.id)) as_mat(t.grad(b.id), k, n).noalias() += as_mat(t.value(a.id)).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out.drop_grad();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    for (std::size_t in : {a.id, b.id}) {
      if (!t.requires_grad(in)) continue;
      auto gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  out.drop_grad();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b.id)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  out.drop_grad();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto av = t.value(a.id).data();
    const auto bv = t.value(b.id).data();
    if (t.requires_grad(a.id)) {
      auto ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.drop_grad();
  for (double& v : out.data()) v *= factor;
  return a.tape->record(std::move(out), {a.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  out.drop_grad();
  for (double& v : out.data()) {
    a.tape->note_relu_input(v);
    v = v > 0.0 ? v : 0.0;
  }
  return a.tape->record(std::move(out), {a.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    const auto av = t.value(a.id).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias);
  require_rank2("add_bias", x);
  if (bias.value().rank() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit rows of " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = x.value();
  out.drop_grad();
  const auto bd = bias.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bd[c];
  }
  return x.tape->record(std::move(out), {x.id, bias.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(x.id)) {
      auto gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bias.id)) {
      auto gb = t.grad(bias.id);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
      }
    }
  });
}

Var softmax_rows(Var x) {
  require_rank2("softmax_rows", x);
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out({n, d});
  const auto xd = x.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = xd.data() + r * d;
    double* o = out.ptr() + r * d;
    double mx = in[0];
    for (std::size_t c = 0; c < d; ++c) {
      if (std::isnan(in[c])) throw NumericError("softmax_rows: NaN input at row " + std::to_string(r));
      mx = std::max(mx, in[c]);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < d; ++c) o[c] /= total;
  }
  return x.tape->record(std::move(out), {x.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    const auto y = t.value(self).data();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

Var concat_features(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_features(std::span<const Var>(parts));
}

Var concat_features(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_features: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_rank2("concat_features", p);
    if (p.rows() != n) {
      throw DimensionError("concat_features: row counts differ, " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.ptr() + r * total + offset);
    }
    offset += widths[k];
  }
  return tape->record(std::move(out), ids, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.requires_grad(ids[k]) && w > 0) {
        auto gi = t.grad(ids[k]);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += g[r * total + off + c];
        }
      }
      off += w;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  require_rank2("layer_norm", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (d == 0) throw DimensionError("layer_norm: zero-width rows");
  if (gain.value().rank() != 1 || gain.cols() != d || bias.value().rank() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " + shape_str(gain.shape()) +
                         " and " + shape_str(bias.shape()));
  }
  Tensor out({n, d});
  // Normalized rows and inverse deviations, kept for the backward pass.
  std::vector<double> xhat(n * d), inv_std(n);
  const auto xd = x.value().data();
  const auto gd = gain.value().data();
  const auto bd = bias.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * inv_std[r];
      xhat[r * d + c] = h;
      out[r * d + c] = gd[c] * h + bd[c];
    }
  }
  return x.tape->record(
      std::move(out), {x.id, gain.id, bias.id},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto gv = t.value(gain.id).data();
        if (t.requires_grad(gain.id)) {
          auto gg = t.grad(gain.id);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (t.requires_grad(bias.id)) {
          auto gb = t.grad(bias.id);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (!t.requires_grad(x.id)) return;
        auto gx = t.grad(x.id);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dh = g[r * d + c] * gv[c];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + c];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t c = 0; c < d; ++c) {
            const double dh = g[r * d + c] * gv[c];
            gx[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
          }
        }
      });
}

Var dropout(Var x, double rate, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.value().size());
  auto& rng = x.tape->rng();
  for (double& m : mask) m = uniform01(rng) < rate ? 0.0 : keep_scale;
  Tensor out = x.value();
  out.drop_grad();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record(std::move(out), {x.id}, [=, mask = std::move(mask)](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record(Tensor({1}, {total}), {x.id}, [=](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(x.id)) v += g;
  });
}

Var mse(Var pred, Var target) {
  require_same_tape(pred, target);
  if (pred.value().size() != target.value().size()) {
    throw DimensionError("mse: length mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto p = pred.value().data();
  const auto y = target.value().data();
  const std::size_t count = p.size();
  if (count == 0) throw DimensionError("mse: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
  return pred.tape->record(Tensor({1}, {total / static_cast<double>(count)}), {pred.id, target.id},
                           [=](Tape& t, std::size_t self) {
                             const double g = t.grad(self)[0] * 2.0 / static_cast<double>(count);
                             const auto pv = t.value(pred.id).data();
                             const auto yv = t.value(target.id).data();
                             if (t.requires_grad(pred.id)) {
                               auto gp = t.grad(pred.id);
                               for (std::size_t i = 0; i < count; ++i) gp[i] += g * (pv[i] - yv[i]);
                             }
                             if (t.requires_grad(target.id)) {
                               auto gy = t.grad(target.id);
                               for (std::size_t i = 0; i < count; ++i) gy[i] -= g * (pv[i] - yv[i]);
                             }
                           });
}

Var block_scores(Var q, Var k, std::size_t block, double factor) {
  require_same_tape(q, k);
  require_blocks("block_scores", q, block);
  require_same_shape("block_scores", q, k);
  const std::size_t rows = q.rows(), dk = q.cols(), batches = rows / block;
  Tensor out({rows, block});
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t off = b * block;
    auto qb = as_mat(q.value().data().subspan(off * dk, block * dk), block, dk);
    auto kb = as_mat(k.value().data().subspan(off * dk, block * dk), block, dk);
    as_mat(out.data().subspan(off * block, block * block), block, block).noalias() = factor * (qb * kb.transpose());
  }
  return q.tape->record(std::move(out), {q.id, k.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto qv = t.value(q.id).data();
    const auto kv = t.value(k.id).data();
    const bool need_q = t.requires_grad(q.id), need_k = t.requires_grad(k.id);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t off = b * block;
      auto gb = as_mat(std::span<const double>(g).subspan(off * block, block * block), block, block);
      if (need_q) {
        as_mat(t.grad(q.id).subspan(off * dk, block * dk), block, dk).noalias() +=
            factor * (gb * as_mat(kv.subspan(off * dk, block * dk), block, dk));
      }
      if (need_k) {
        as_mat(t.grad(k.id).subspan(off * dk, block * dk), block, dk).noalias() +=
            factor * (gb.transpose() * as_mat(qv.subspan(off * dk, block * dk), block, dk));
      }
    }
  });
}

Var causal_mask(Var scores, std::size_t block) {
  require_blocks("causal_mask", scores, block);
  if (scores.cols() != block) {
    throw DimensionError("causal_mask: scores " + shape_str(scores.shape()) + " are not square per sequence of length " +
                         std::to_string(block));
  }
  const std::size_t rows = scores.rows();
  Tensor out = scores.value();
  out.drop_grad();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = r % block;
    for (std::size_t j = i + 1; j < block; ++j) out[r * block + j] = kMaskValue;
  }
  return scores.tape->record(std::move(out), {scores.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gs = t.grad(scores.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r % block;
      for (std::size_t j = 0; j <= i; ++j) gs[r * block + j] += g[r * block + j];
    }
  });
}

Var block_attend(Var alpha, Var v, std::size_t block) {
  require_same_tape(alpha, v);
  require_blocks("block_attend", alpha, block);
  require_blocks("block_attend", v, block);
  if (alpha.rows() != v.rows() || alpha.cols() != block) {
    throw DimensionError("block_attend: weights " + shape_str(alpha.shape()) + " do not match values " +
                         shape_str(v.shape()));
  }
  const std::size_t rows = v.rows(), dv = v.cols(), batches = rows / block;
  Tensor out({rows, dv});
  const auto av = alpha.value().data();
  const auto vv = v.value().data();
  // Zero weights are skipped outright, so masked positions cannot leak into
  // the sum even through signed zeros.
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t off = b * block;
    for (std::size_t i = 0; i < block; ++i) {
      double* o = out.ptr() + (off + i) * dv;
      for (std::size_t j = 0; j < block; ++j) {
        const double w = av[(off + i) * block + j];
        if (w == 0.0) continue;
        const double* vr = vv.data() + (off + j) * dv;
        for (std::size_t c = 0; c < dv; ++c) o[c] += w * vr[c];
      }
    }
  }
  return alpha.tape->record(std::move(out), {alpha.id, v.id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto a = t.value(alpha.id).data();
    const auto vals = t.value(v.id).data();
    const bool need_a = t.requires_grad(alpha.id), need_v = t.requires_grad(v.id);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t off = b * block;
      auto gb = as_mat(std::span<const double>(g).subspan(off * dv, block * dv), block, dv);
      if (need_a) {
        as_mat(t.grad(alpha.id).subspan(off * block, block * block), block, block).noalias() +=
            gb * as_mat(vals.subspan(off * dv, block * dv), block, dv).transpose();
      }
      if (need_v) {
        as_mat(t.grad(v.id).subspan(off * dv, block * dv), block, dv).noalias() +=
            as_mat(a.subspan(off * block, block * block), block, block).transpose() * gb;
      }
    }
  });
}

}  // namespace mtl::ad
