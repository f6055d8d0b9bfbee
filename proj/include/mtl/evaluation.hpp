// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/sharing.hpp"
#include "mtl/training.hpp"

namespace mtl {

// Pearson correlation. Throws NumericError when either side is constant.
double corr(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
// Percent; a term with pred == truth == 0 counts as 0.
double smape(std::span<const double> pred, std::span<const double> truth);

struct TaskMetrics {
  std::string task_id;
  double corr = 0.0;
  double rmse = 0.0;
  double smape = 0.0;
  std::size_t n = 0;
};

struct MetricReport {
  std::vector<TaskMetrics> tasks;
  double mean_corr = 0.0;
  double mean_rmse = 0.0;
  double mean_smape = 0.0;
};

MetricReport make_report(std::vector<TaskMetrics> tasks);
TaskMetrics score_task(const std::string& task_id, std::span<const double> pred, std::span<const double> truth);

// One task's forecasts and ground truth for every window of a split.
struct TaskPredictions {
  std::string task_id;
  std::vector<double> pred;
  std::vector<double> truth;
};

// The forecast for each window is the model output at its last position.
// `denormalized` maps both sides back to the task's original units.
std::vector<TaskPredictions> collect_predictions(const MultiTaskModel& model, const PreparedDataset& data, Split split,
                                                 std::size_t window, bool denormalized = true);

// Metrics on denormalized values, averaged over tasks for the aggregates.
MetricReport evaluate_model(const MultiTaskModel& model, const PreparedDataset& data, Split split, std::size_t window,
                            bool denormalized = true);

// `task_id,corr,rmse,smape_percent,n`, one row per task.
void write_report_csv(std::ostream& out, const MetricReport& report);
MetricReport read_report_csv(std::istream& in);
// `task_id,index,pred,truth`
void write_predictions_csv(std::ostream& out, const std::vector<TaskPredictions>& preds);

// Autoregressive forecast: predict one step, append it, slide the window,
// repeat. `seed_window` and the result are in original units.
std::vector<double> rollout_forecast(const MultiTaskModel& model, std::size_t task, const NormalizationParams& norm,
                                     std::span<const double> seed_window, std::size_t horizon);

// s_0 = x_0, s_t = alpha x_t + (1 - alpha) s_{t-1}
std::vector<double> exponential_smoothing(std::span<const double> values, double alpha = 0.05);

struct SchemeLog {
  std::string scheme;
  const TrainingLog* log = nullptr;
};

// `step,scheme,loss,smoothed` over the per-step training losses.
void export_curves(std::ostream& out, std::span<const SchemeLog> logs, double alpha = 0.05);

}  // namespace mtl
