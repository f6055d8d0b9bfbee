// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind the mtlattn executable. Every command
// prints its fully resolved configuration before doing any work.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtl/checkpoint.hpp"
#include "mtl/data.hpp"
#include "mtl/evaluation.hpp"
#include "mtl/sharing.hpp"
#include "mtl/training.hpp"

namespace mtl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3, kVerification = 4 };

struct RunConfig {
  TrainConfig train;
  ModelDims dims;
  Scheme scheme = Scheme::Global;
  std::string data_path;
  bool synth = false;
  SynthSpec synth_spec;
  std::size_t window = 90;  // 15 hours of 10-minute steps
  std::string out_dir = "run";

  ModelConfig model_config() const;
  SynthSpec resolved_synth() const;
};

// Keys accepted in config files and as --flags, in echo order.
const std::vector<std::string>& config_keys();
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// Flat `key=value` lines; '#' starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);
std::string echo_config(const RunConfig& cfg);
// Built-in defaults < file < flags.
RunConfig resolve_config(const std::optional<std::string>& config_file, const std::map<std::string, std::string>& flags);

// Seeds derived from the single run seed.
std::uint64_t data_seed(const RunConfig& cfg);
std::uint64_t model_seed(const RunConfig& cfg);
// TrainConfig with its seed replaced by the trainer's derived seed.
TrainConfig trainer_config(const RunConfig& cfg);

MultiTaskDataset load_dataset(const RunConfig& cfg);

Checkpoint make_checkpoint(const RunConfig& cfg, const MultiTaskModel& model, const TrainProgress& progress,
                           const PreparedDataset& data);
struct Restored {
  RunConfig config;
  MultiTaskModel model;
  TrainProgress progress;
  std::vector<NormalizationParams> norms;
};
Restored restore_checkpoint(const Checkpoint& ckpt);

void write_step_log(std::ostream& out, const TrainingLog& log);
void write_epoch_log(std::ostream& out, const TrainingLog& log);

struct AblationRun {
  Scheme scheme;
  ModelConfig model;
  std::size_t parameters = 0;
  TrainingLog log;
  // Mean of the validation losses over the last 20% of epochs (at least one).
  double final_validation = 0.0;
  // Mean training loss over the first 20% of steps.
  double early_loss = 0.0;
};

struct AblationResult {
  std::vector<AblationRun> runs;  // global, hybrid, noshare
  double parameter_mismatch = 0.0;
};

// Trains the three schemes on the same data and seed. Throws ConfigError if
// the capacity-matched baseline misses the sharing schemes by more than 5%.
AblationResult run_ablation(const RunConfig& cfg);
double final_validation(const TrainingLog& log);
double early_loss(const TrainingLog& log);

struct GradcheckOptions {
  double tolerance = 1e-4;
  double eps = 1e-5;
  bool inject_fault = false;
};
struct GradcheckOutcome {
  Scheme scheme;
  GradcheckReport report;
  std::size_t redraws = 0;  // batches rejected for lying near a ReLU kink
};
// d_model 8, 2 heads, 2 layers, d_ff 16, window 5, 2 tasks, dropout off.
// Each scheme is checked on a batch of i.i.d. inputs whose forward pass keeps
// every ReLU input at least 1e-4 away from zero.
std::vector<GradcheckOutcome> run_gradcheck(const GradcheckOptions& options, std::uint64_t seed);
ModelDims tiny_dims();

// Commands. `out` receives the config echo and human-readable progress.
int cmd_generate(const RunConfig& cfg, const std::string& output, std::ostream& out);
struct TrainOptions {
  std::string resume;
  std::size_t checkpoint_every = 0;
};
int cmd_train(const RunConfig& cfg, const TrainOptions& options, std::ostream& out);
struct EvaluateOptions {
  std::string checkpoint;
  std::string split = "test";
  std::string output;
  std::string dump_predictions;
  bool verbose = false;
};
int cmd_evaluate(const EvaluateOptions& options, std::ostream& out);
int cmd_ablate(const RunConfig& cfg, std::ostream& out);
struct ForecastOptions {
  std::string checkpoint;
  std::string task;
  std::size_t horizon = 1;
  std::string output;
};
int cmd_forecast(const ForecastOptions& options, std::ostream& out);
int cmd_gradcheck(const GradcheckOptions& options, std::uint64_t seed, std::ostream& out);

// Runs `body`, mapping library errors onto exit codes and printing them to `err`.
int guarded(std::ostream& err, const std::function<int()>& body);

}  // namespace mtl::cli
