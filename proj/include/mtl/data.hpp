// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-task series ingestion, per-task min-max scaling, chronological
// splitting, sliding windows and a synthetic related-series generator.
//
// CSV contract: header `task_id,timestamp,value`; timestamp is integer epoch
// seconds or ISO-8601 (`YYYY-MM-DDTHH:MM:SS[Z]`), whichever the first data
// row uses; LF or CRLF line endings. Rows of one task must be in increasing
// time order at a constant interval.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mtl {

struct TaskSeries {
  std::string task_id;
  std::vector<std::int64_t> timestamps;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  // Spacing between consecutive timestamps (0 for fewer than two rows).
  std::int64_t interval() const;
};

struct MultiTaskDataset {
  std::vector<TaskSeries> tasks;
  std::size_t num_tasks() const { return tasks.size(); }
};

MultiTaskDataset read_csv(std::istream& in);
MultiTaskDataset load_csv(const std::string& path);
void write_csv(std::ostream& out, const MultiTaskDataset& dataset);

// Seconds since the Unix epoch for `YYYY-MM-DD[T ]HH:MM:SS[Z]`.
std::int64_t parse_iso8601(const std::string& text);

// v -> 2 (v - min) / (max - min) - 1
struct NormalizationParams {
  double min = 0.0;
  double max = 1.0;

  static NormalizationParams fit(std::span<const double> train_values);
  double normalize(double v) const { return 2.0 * (v - min) / (max - min) - 1.0; }
  double denormalize(double v) const { return (v + 1.0) * (max - min) / 2.0 + min; }
  std::vector<double> normalize(std::span<const double> values) const;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

enum class Split { Train, Validation, Test };
std::string to_string(Split split);
// Accepts "train", "val"/"validation" or "test".
Split parse_split(const std::string& name);

struct SplitRanges {
  IndexRange train, validation, test;
  const IndexRange& operator[](Split s) const;
};

// Contiguous train/validation/test ranges of sizes floor(0.6 L), floor(0.2 L)
// and the remainder.
SplitRanges chronological_split(std::size_t length, double train_fraction = 0.6, double validation_fraction = 0.2);

struct WindowPair {
  std::vector<double> x;  // values[i, i + s)
  std::vector<double> y;  // values[i + 1, i + s + 1)
};

// Stride-1 windows; yields segment.size() - s pairs.
std::vector<WindowPair> make_windows(std::span<const double> segment, std::size_t s);

// One task after fitting scaling on its training range.
struct PreparedTask {
  std::string task_id;
  std::vector<std::int64_t> timestamps;
  std::vector<double> raw;
  std::vector<double> normalized;
  NormalizationParams norm;
  SplitRanges split;

  std::span<const double> segment(Split s) const;
  std::span<const double> raw_segment(Split s) const;
};

struct PreparedDataset {
  std::vector<PreparedTask> tasks;

  std::size_t num_tasks() const { return tasks.size(); }
  static PreparedDataset prepare(const MultiTaskDataset& dataset);
  // Same split, but scaling taken from `norms` (e.g. restored from a checkpoint).
  static PreparedDataset prepare(const MultiTaskDataset& dataset, std::span<const NormalizationParams> norms);
  // Index of the task with this id.
  std::size_t find(const std::string& task_id) const;
};

struct SynthSpec {
  std::size_t num_tasks = 4;
  std::size_t length = 2000;
  double shared_amplitude = 1.0;
  // Sinusoids per task-specific component.
  std::size_t harmonics = 2;
  double noise_sigma = 0.05;
  // Weight of the shared component; 1 - rho goes to the task's own one.
  double rho = 0.8;
  std::uint64_t seed = 0;
  std::int64_t start_timestamp = 1383264000;  // 2013-11-01T00:00:00Z
  std::int64_t interval_seconds = 600;
};

// value_m(t) = rho * shared(t) + (1 - rho) * own_m(t) + N(0, sigma^2), where
// shared(t) mixes daily, half-daily and weekly sinusoids (at 10-minute steps)
// and own_m(t) uses periods unique to task m.
MultiTaskDataset synth_generate(const SynthSpec& spec);

}  // namespace mtl
