// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

void check_lengths(const char* what, std::span<const double> a, std::span<const double> b, std::size_t min_n) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  if (a.size() < min_n) throw DimensionError(std::string(what) + ": needs at least " + std::to_string(min_n) + " points");
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

double corr(std::span<const double> pred, std::span<const double> truth) {
  check_lengths("corr", pred, truth, 2);
  const double n = static_cast<double>(pred.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  double cross = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = truth[i] - mt;
    cross += a * b;
    sp += a * a;
    st += b * b;
  }
  if (sp == 0.0 || st == 0.0) throw NumericError("corr: undefined for a constant sequence");
  // sqrt(fl(a * a)) == a, so identical inputs give exactly 1.
  return cross / std::sqrt(sp * st);
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_lengths("rmse", pred, truth, 1);
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(sq / static_cast<double>(pred.size()));
}

double smape(std::span<const double> pred, std::span<const double> truth) {
  check_lengths("smape", pred, truth, 1);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double denom = (std::abs(pred[i]) + std::abs(truth[i])) / 2.0;
    if (denom == 0.0) continue;
    total += std::abs(pred[i] - truth[i]) / denom;
  }
  return 100.0 * total / static_cast<double>(pred.size());
}

TaskMetrics score_task(const std::string& task_id, std::span<const double> pred, std::span<const double> truth) {
  return {task_id, corr(pred, truth), rmse(pred, truth), smape(pred, truth), pred.size()};
}

MetricReport make_report(std::vector<TaskMetrics> tasks) {
  MetricReport r;
  r.tasks = std::move(tasks);
  if (r.tasks.empty()) return r;
  for (const TaskMetrics& t : r.tasks) {
    r.mean_corr += t.corr;
    r.mean_rmse += t.rmse;
    r.mean_smape += t.smape;
  }
  const double n = static_cast<double>(r.tasks.size());
  r.mean_corr /= n;
  r.mean_rmse /= n;
  r.mean_smape /= n;
  return r;
}

std::vector<TaskPredictions> collect_predictions(const MultiTaskModel& model, const PreparedDataset& data, Split split,
                                                 std::size_t window, bool denormalized) {
  constexpr std::size_t kChunk = 256;
  std::vector<TaskPredictions> out;
  for (std::size_t m = 0; m < data.num_tasks(); ++m) {
    const PreparedTask& task = data.tasks[m];
    const auto seg = task.segment(split);
    if (seg.size() < window + 1) {
      throw DataError("split '" + to_string(split) + "' of task '" + task.task_id + "' has no complete window");
    }
    TaskPredictions tp{task.task_id, {}, {}};
    const std::size_t windows = seg.size() - window;
    for (std::size_t first = 0; first < windows; first += kChunk) {
      const std::size_t count = std::min(kChunk, windows - first);
      std::vector<std::vector<double>> xs;
      xs.reserve(count);
      for (std::size_t w = first; w < first + count; ++w) xs.emplace_back(seg.begin() + w, seg.begin() + w + window);
      for (double p : model.predict_next(m, xs)) tp.pred.push_back(p);
      for (std::size_t w = first; w < first + count; ++w) tp.truth.push_back(seg[w + window]);
    }
    if (denormalized) {
      for (double& v : tp.pred) v = task.norm.denormalize(v);
      // Ground truth comes straight from the raw series rather than a round trip.
      const auto raw = task.raw_segment(split);
      for (std::size_t i = 0; i < tp.truth.size(); ++i) tp.truth[i] = raw[i + window];
    }
    out.push_back(std::move(tp));
  }
  return out;
}

MetricReport evaluate_model(const MultiTaskModel& model, const PreparedDataset& data, Split split, std::size_t window,
                            bool denormalized) {
  std::vector<TaskMetrics> tasks;
  for (const TaskPredictions& tp : collect_predictions(model, data, split, window, denormalized)) {
    tasks.push_back(score_task(tp.task_id, tp.pred, tp.truth));
  }
  if (tasks.empty()) throw DataError("nothing to evaluate");
  return make_report(std::move(tasks));
}

void write_report_csv(std::ostream& out, const MetricReport& report) {
  out << "task_id,corr,rmse,smape_percent,n\n";
  for (const TaskMetrics& t : report.tasks) {
    out << t.task_id << ',' << fmt(t.corr) << ',' << fmt(t.rmse) << ',' << fmt(t.smape) << ',' << t.n << '\n';
  }
}

MetricReport read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty metric report");
  std::vector<TaskMetrics> tasks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    TaskMetrics t;
    std::string field;
    std::getline(ss, t.task_id, ',');
    std::getline(ss, field, ',');
    t.corr = std::stod(field);
    std::getline(ss, field, ',');
    t.rmse = std::stod(field);
    std::getline(ss, field, ',');
    t.smape = std::stod(field);
    std::getline(ss, field, ',');
    t.n = std::stoul(field);
    tasks.push_back(std::move(t));
  }
  return make_report(std::move(tasks));
}

void write_predictions_csv(std::ostream& out, const std::vector<TaskPredictions>& preds) {
  out << "task_id,index,pred,truth\n";
  for (const TaskPredictions& tp : preds) {
    for (std::size_t i = 0; i < tp.pred.size(); ++i) {
      out << tp.task_id << ',' << i << ',' << fmt(tp.pred[i]) << ',' << fmt(tp.truth[i]) << '\n';
    }
  }
}

std::vector<double> rollout_forecast(const MultiTaskModel& model, std::size_t task, const NormalizationParams& norm,
                                     std::span<const double> seed_window, std::size_t horizon) {
  if (horizon < 1) throw UsageError("rollout horizon must be at least 1");
  if (seed_window.empty()) throw UsageError("rollout needs a non-empty seed window");
  std::vector<std::vector<double>> window(1, norm.normalize(seed_window));
  std::vector<double> out;
  out.reserve(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    const double next = model.predict_next(task, window).front();
    out.push_back(norm.denormalize(next));
    auto& w = window.front();
    w.erase(w.begin());
    w.push_back(next);
  }
  return out;
}

std::vector<double> exponential_smoothing(std::span<const double> values, double alpha) {
  std::vector<double> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back(i == 0 ? values[0] : alpha * values[i] + (1.0 - alpha) * out.back());
  }
  return out;
}

void export_curves(std::ostream& out, std::span<const SchemeLog> logs, double alpha) {
  out << "step,scheme,loss,smoothed\n";
  for (const SchemeLog& s : logs) {
    std::vector<double> losses;
    for (const StepRecord& r : s.log->steps) losses.push_back(r.loss);
    const auto smoothed = exponential_smoothing(losses, alpha);
    for (std::size_t i = 0; i < losses.size(); ++i) {
      out << s.log->steps[i].step << ',' << s.scheme << ',' << fmt(losses[i]) << ',' << fmt(smoothed[i]) << '\n';
    }
  }
}

}  // namespace mtl
