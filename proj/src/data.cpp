// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "mtl/errors.hpp"

namespace mtl {

std::int64_t TaskSeries::interval() const {
  return timestamps.size() < 2 ? 0 : timestamps[1] - timestamps[0];
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) return false;
  return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed) != 7 ||
      (sep != 'T' && sep != ' ')) {
    throw DataError("not an ISO-8601 timestamp: '" + text + "'");
  }
  const std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!(rest.empty() || rest == "Z")) throw DataError("unsupported timestamp suffix in '" + text + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw DataError("invalid calendar timestamp '" + text + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

MultiTaskDataset read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line()) throw DataError("no data rows");
  const auto header = split_fields(line);
  int col_task = -1, col_time = -1, col_value = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    if (name == "task_id") col_task = static_cast<int>(i);
    if (name == "timestamp") col_time = static_cast<int>(i);
    if (name == "value") col_value = static_cast<int>(i);
  }
  if (col_task < 0) throw ParseError(line_no, "missing column 'task_id'");
  if (col_time < 0) throw ParseError(line_no, "missing column 'timestamp'");
  if (col_value < 0) throw ParseError(line_no, "missing column 'value'");
  const std::size_t needed = static_cast<std::size_t>(std::max({col_task, col_time, col_value})) + 1;

  MultiTaskDataset ds;
  std::unordered_map<std::string, std::size_t> index;
  int iso = -1;  // decided by the first data row
  while (next_line()) {
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() < needed) throw ParseError(line_no, "expected " + std::to_string(needed) + " fields");
    const std::string id = trim(fields[static_cast<std::size_t>(col_task)]);
    const std::string ts_text = trim(fields[static_cast<std::size_t>(col_time)]);
    const std::string value_text = trim(fields[static_cast<std::size_t>(col_value)]);
    if (id.empty()) throw ParseError(line_no, "empty task_id");
    if (iso < 0) iso = is_integer(ts_text) ? 0 : 1;

    std::int64_t ts = 0;
    if (iso == 0) {
      if (!is_integer(ts_text)) throw ParseError(line_no, "timestamp '" + ts_text + "' is not epoch seconds");
      ts = std::stoll(ts_text);
    } else {
      try {
        ts = parse_iso8601(ts_text);
      } catch (const DataError& e) {
        throw ParseError(line_no, e.what());
      }
    }
    double value = 0.0;
    if (!parse_double(value_text, value)) throw ParseError(line_no, "non-numeric value '" + value_text + "'");

    auto [it, fresh] = index.emplace(id, ds.tasks.size());
    if (fresh) ds.tasks.push_back(TaskSeries{id, {}, {}});
    TaskSeries& series = ds.tasks[it->second];
    if (!series.timestamps.empty()) {
      const std::int64_t prev = series.timestamps.back();
      if (ts <= prev) throw ParseError(line_no, "timestamp out of order for task '" + id + "'");
      if (series.timestamps.size() >= 2 && ts - prev != series.interval()) {
        throw ParseError(line_no, "irregular spacing for task '" + id + "' (expected " +
                                      std::to_string(series.interval()) + " s, got " + std::to_string(ts - prev) + " s)");
      }
    }
    series.timestamps.push_back(ts);
    series.values.push_back(value);
  }
  if (ds.tasks.empty()) throw DataError("no data rows");
  return ds;
}

MultiTaskDataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in);
}

void write_csv(std::ostream& out, const MultiTaskDataset& dataset) {
  out << "task_id,timestamp,value\n";
  char buf[64];
  for (const TaskSeries& s : dataset.tasks) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof(buf), s.values[i]);
      out << s.task_id << ',' << s.timestamps[i] << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf))
          << '\n';
    }
  }
}

NormalizationParams NormalizationParams::fit(std::span<const double> train_values) {
  if (train_values.empty()) throw DataError("cannot fit normalization on an empty range");
  const auto [lo, hi] = std::minmax_element(train_values.begin(), train_values.end());
  if (!(*hi > *lo)) throw DataError("degenerate series: training range is constant");
  return {*lo, *hi};
}

std::vector<double> NormalizationParams::normalize(std::span<const double> values) const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [this](double v) { return normalize(v); });
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Validation:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val" || name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw UsageError("unknown split '" + name + "' (expected train, val or test)");
}

const IndexRange& SplitRanges::operator[](Split s) const {
  switch (s) {
    case Split::Train:
      return train;
    case Split::Validation:
      return validation;
    case Split::Test:
      return test;
  }
  return test;
}

SplitRanges chronological_split(std::size_t length, double train_fraction, double validation_fraction) {
  if (length < 5) throw DataError("series of length " + std::to_string(length) + " is too short to split (need >= 5)");
  if (!(train_fraction > 0.0 && validation_fraction >= 0.0 && train_fraction + validation_fraction < 1.0)) {
    throw ConfigError("split fractions must be positive and leave room for a test range");
  }
  // The epsilon absorbs representation error such as 0.6 * 5 = 2.9999999999999996.
  const auto floor_of = [length](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(length) * f + 1e-9));
  };
  const std::size_t n_train = floor_of(train_fraction);
  const std::size_t n_val = floor_of(validation_fraction);
  SplitRanges r;
  r.train = {0, n_train};
  r.validation = {n_train, n_train + n_val};
  r.test = {n_train + n_val, length};
  return r;
}

std::vector<WindowPair> make_windows(std::span<const double> segment, std::size_t s) {
  if (s == 0) throw ConfigError("window length must be positive");
  if (segment.size() < s + 1) {
    throw DataError("segment of length " + std::to_string(segment.size()) + " is shorter than window + 1 = " +
                    std::to_string(s + 1));
  }
  std::vector<WindowPair> out;
  out.reserve(segment.size() - s);
  for (std::size_t i = 0; i + s < segment.size(); ++i) {
    out.push_back({{segment.begin() + static_cast<std::ptrdiff_t>(i), segment.begin() + static_cast<std::ptrdiff_t>(i + s)},
                   {segment.begin() + static_cast<std::ptrdiff_t>(i + 1),
                    segment.begin() + static_cast<std::ptrdiff_t>(i + s + 1)}});
  }
  return out;
}

std::span<const double> PreparedTask::segment(Split s) const {
  const IndexRange& r = split[s];
  return std::span<const double>(normalized).subspan(r.begin, r.size());
}

std::span<const double> PreparedTask::raw_segment(Split s) const {
  const IndexRange& r = split[s];
  return std::span<const double>(raw).subspan(r.begin, r.size());
}

PreparedDataset PreparedDataset::prepare(const MultiTaskDataset& dataset) {
  std::vector<NormalizationParams> norms;
  for (const TaskSeries& s : dataset.tasks) {
    const SplitRanges r = chronological_split(s.size());
    try {
      norms.push_back(NormalizationParams::fit(std::span<const double>(s.values).subspan(0, r.train.size())));
    } catch (const DataError& e) {
      throw DataError("task '" + s.task_id + "': " + e.what());
    }
  }
  return prepare(dataset, norms);
}

PreparedDataset PreparedDataset::prepare(const MultiTaskDataset& dataset, std::span<const NormalizationParams> norms) {
  if (norms.size() != dataset.num_tasks()) throw DataError("normalization count differs from task count");
  PreparedDataset out;
  for (std::size_t m = 0; m < dataset.num_tasks(); ++m) {
    const TaskSeries& s = dataset.tasks[m];
    PreparedTask t;
    t.task_id = s.task_id;
    t.timestamps = s.timestamps;
    t.raw = s.values;
    t.split = chronological_split(s.size());
    t.norm = norms[m];
    t.normalized = t.norm.normalize(t.raw);
    out.tasks.push_back(std::move(t));
  }
  return out;
}

std::size_t PreparedDataset::find(const std::string& task_id) const {
  for (std::size_t m = 0; m < tasks.size(); ++m) {
    if (tasks[m].task_id == task_id) return m;
  }
  throw LookupError("unknown task '" + task_id + "'");
}

MultiTaskDataset synth_generate(const SynthSpec& spec) {
  if (spec.num_tasks == 0 || spec.length == 0) throw ConfigError("synthetic spec needs tasks and length");
  if (!(spec.rho >= 0.0 && spec.rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (spec.noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  if (spec.interval_seconds <= 0) throw ConfigError("interval must be positive");

  struct Wave {
    double amplitude, period, phase;
  };
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  // 144 steps = one day at 10-minute resolution.
  std::vector<Wave> shared;
  for (double period : {144.0, 72.0, 1008.0}) shared.push_back({spec.shared_amplitude * amp(rng), period, phase(rng)});

  std::vector<std::vector<Wave>> own(spec.num_tasks);
  for (std::size_t m = 0; m < spec.num_tasks; ++m) {
    for (std::size_t k = 0; k < spec.harmonics; ++k) {
      // Incommensurate periods, distinct for every (task, harmonic) pair.
      const double period = 144.0 / static_cast<double>(k + 1) * (1.0 + 0.37 * static_cast<double>(m + 1));
      own[m].push_back({amp(rng), period, phase(rng)});
    }
  }

  auto wave_sum = [](const std::vector<Wave>& waves, double t) {
    double v = 0.0;
    for (const Wave& w : waves) v += w.amplitude * std::sin(2.0 * std::numbers::pi * t / w.period + w.phase);
    return v;
  };

  MultiTaskDataset ds;
  for (std::size_t m = 0; m < spec.num_tasks; ++m) {
    TaskSeries s;
    s.task_id = "task" + std::to_string(m + 1);
    s.timestamps.reserve(spec.length);
    s.values.reserve(spec.length);
    for (std::size_t i = 0; i < spec.length; ++i) {
      const double t = static_cast<double>(i);
      double v = spec.rho * wave_sum(shared, t) + (1.0 - spec.rho) * wave_sum(own[m], t);
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
      s.timestamps.push_back(spec.start_timestamp + static_cast<std::int64_t>(i) * spec.interval_seconds);
      s.values.push_back(v);
    }
    ds.tasks.push_back(std::move(s));
  }
  return ds;
}

}  // namespace mtl
