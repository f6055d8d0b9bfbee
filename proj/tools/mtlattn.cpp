// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mtl/cli.hpp"

namespace {

using mtl::cli::RunConfig;

struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::string file;
  bool synth = false;
};

// Registers every config key as a --flag on `cmd`.
void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.file, "key=value config file (flags override it)");
  cmd->add_flag("--synth", flags.synth, "use the built-in synthetic generator");
  for (const std::string& key : mtl::cli::config_keys()) {
    if (key == "synth") continue;
    cmd->add_option_function<std::string>(
        "--" + key, [&flags, key](const std::string& v) { flags.values[key] = v; }, "config key '" + key + "'");
  }
}

RunConfig resolve(const ConfigFlags& flags) {
  auto values = flags.values;
  if (flags.synth) values["synth"] = "true";
  return mtl::cli::resolve_config(flags.file.empty() ? std::nullopt : std::optional<std::string>(flags.file), values);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task attention forecaster"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, ablate_flags;
  std::string gen_output;
  auto* gen = app.add_subcommand("generate", "write a synthetic multi-task CSV");
  add_config_flags(gen, gen_flags);
  gen->add_option("--output", gen_output, "CSV path (default <out>/synth.csv)");

  mtl::cli::TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "fit one sharing scheme");
  add_config_flags(train, train_flags);
  train->add_option("--resume", train_opts.resume, "checkpoint to continue from");
  train->add_option("--checkpoint-every", train_opts.checkpoint_every, "also save every N epochs");

  mtl::cli::EvaluateOptions eval_opts;
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a split");
  eval->add_option("--checkpoint", eval_opts.checkpoint)->required();
  eval->add_option("--split", eval_opts.split, "train, val or test");
  eval->add_option("--output", eval_opts.output, "report CSV path (default stdout)");
  eval->add_option("--dump-predictions", eval_opts.dump_predictions, "per-window predictions CSV");
  eval->add_flag("--verbose", eval_opts.verbose, "also report normalized-scale metrics");

  auto* ablate = app.add_subcommand("ablate", "train global, hybrid and no-share models");
  add_config_flags(ablate, ablate_flags);

  mtl::cli::ForecastOptions fc_opts;
  auto* forecast = app.add_subcommand("forecast", "autoregressive forecast past the end of a series");
  forecast->add_option("--checkpoint", fc_opts.checkpoint)->required();
  forecast->add_option("--task", fc_opts.task)->required();
  forecast->add_option("--horizon", fc_opts.horizon);
  forecast->add_option("--output", fc_opts.output, "CSV path (default stdout)");

  mtl::cli::GradcheckOptions gc_opts;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  gradcheck->add_option("--tolerance", gc_opts.tolerance);
  gradcheck->add_option("--eps", gc_opts.eps);
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_flag("--inject-fault", gc_opts.inject_fault, "corrupt one backward pass (must FAIL)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mtl::cli::kUsage;
  }

  return mtl::cli::guarded(std::cerr, [&]() -> int {
    if (*gen) return mtl::cli::cmd_generate(resolve(gen_flags), gen_output, std::cout);
    if (*train) return mtl::cli::cmd_train(resolve(train_flags), train_opts, std::cout);
    if (*eval) return mtl::cli::cmd_evaluate(eval_opts, std::cout);
    if (*ablate) return mtl::cli::cmd_ablate(resolve(ablate_flags), std::cout);
    if (*forecast) return mtl::cli::cmd_forecast(fc_opts, std::cout);
    return mtl::cli::cmd_gradcheck(gc_opts, gc_seed, std::cout);
  });
}
