// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mtl/errors.hpp"

namespace mtl::cli {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw UsageError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << content;
  if (!f) throw DataError("failed writing '" + path.string() + "'");
}

std::size_t tail_count(std::size_t n) { return std::max<std::size_t>(1, (n + 4) / 5); }

// Forward pass whose backward deliberately halves the gradient.
ad::Var faulty_identity(ad::Var x) {
  Tensor out = x.value();
  out.drop_grad();
  return x.tape->record(std::move(out), {x.id}, [x](ad::Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 0.5 * g[i];
  });
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.scheme = scheme;
  m.dims = dims;
  m.dropout = train.dropout;
  m.num_tasks = synth ? synth_spec.num_tasks : 0;
  return m;
}

SynthSpec RunConfig::resolved_synth() const {
  SynthSpec s = synth_spec;
  s.seed = data_seed(*this);
  return s;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "scheme",  "data",          "synth",         "tasks",    "length",     "rho",        "sigma",
      "harmonics", "amplitude",   "window",        "epochs",   "seed",       "out",        "lr",
      "batch-size", "max-grad-norm", "gamma",      "decay-step", "weight-decay", "dropout", "beta1",
      "beta2",   "adam-eps",      "steps-per-epoch", "max-steps", "d-model",  "heads",      "layers",
      "d-ff",    "max-len"};
  return keys;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "scheme") c.scheme = parse_scheme(v);
  else if (key == "data") c.data_path = v;
  else if (key == "synth") c.synth = to_bool(key, v);
  else if (key == "tasks") c.synth_spec.num_tasks = to_uint(key, v);
  else if (key == "length") c.synth_spec.length = to_uint(key, v);
  else if (key == "rho") c.synth_spec.rho = to_double(key, v);
  else if (key == "sigma") c.synth_spec.noise_sigma = to_double(key, v);
  else if (key == "harmonics") c.synth_spec.harmonics = to_uint(key, v);
  else if (key == "amplitude") c.synth_spec.shared_amplitude = to_double(key, v);
  else if (key == "window") c.window = to_uint(key, v);
  else if (key == "epochs") c.train.epochs = to_uint(key, v);
  else if (key == "seed") c.train.seed = to_uint(key, v);
  else if (key == "out") c.out_dir = v;
  else if (key == "lr") c.train.learning_rate = to_double(key, v);
  else if (key == "batch-size") c.train.batch_size = to_uint(key, v);
  else if (key == "max-grad-norm") c.train.max_grad_norm = to_double(key, v);
  else if (key == "gamma") c.train.decay_gamma = to_double(key, v);
  else if (key == "decay-step") c.train.decay_step = to_double(key, v);
  else if (key == "weight-decay") c.train.weight_decay = to_double(key, v);
  else if (key == "dropout") c.train.dropout = to_double(key, v);
  else if (key == "beta1") c.train.beta1 = to_double(key, v);
  else if (key == "beta2") c.train.beta2 = to_double(key, v);
  else if (key == "adam-eps") c.train.adam_eps = to_double(key, v);
  else if (key == "steps-per-epoch") c.train.steps_per_epoch = to_uint(key, v);
  else if (key == "max-steps") c.train.max_steps = to_uint(key, v);
  else if (key == "d-model") c.dims.d_model = to_uint(key, v);
  else if (key == "heads") c.dims.heads = to_uint(key, v);
  else if (key == "layers") c.dims.layers = to_uint(key, v);
  else if (key == "d-ff") c.dims.d_ff = to_uint(key, v);
  else if (key == "max-len") c.dims.max_len = to_uint(key, v);
  else throw UsageError("unknown configuration key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  apply_config_text(cfg, ss.str());
}

std::string echo_config(const RunConfig& c) {
  std::ostringstream o;
  o << "scheme=" << to_string(c.scheme) << '\n'
    << "data=" << c.data_path << '\n'
    << "synth=" << (c.synth ? "true" : "false") << '\n'
    << "tasks=" << c.synth_spec.num_tasks << '\n'
    << "length=" << c.synth_spec.length << '\n'
    << "rho=" << fmt(c.synth_spec.rho) << '\n'
    << "sigma=" << fmt(c.synth_spec.noise_sigma) << '\n'
    << "harmonics=" << c.synth_spec.harmonics << '\n'
    << "amplitude=" << fmt(c.synth_spec.shared_amplitude) << '\n'
    << "window=" << c.window << '\n'
    << "epochs=" << c.train.epochs << '\n'
    << "seed=" << c.train.seed << '\n'
    << "out=" << c.out_dir << '\n'
    << "lr=" << fmt(c.train.learning_rate) << '\n'
    << "batch-size=" << c.train.batch_size << '\n'
    << "max-grad-norm=" << fmt(c.train.max_grad_norm) << '\n'
    << "gamma=" << fmt(c.train.decay_gamma) << '\n'
    << "decay-step=" << fmt(c.train.decay_step) << '\n'
    << "weight-decay=" << fmt(c.train.weight_decay) << '\n'
    << "dropout=" << fmt(c.train.dropout) << '\n'
    << "beta1=" << fmt(c.train.beta1) << '\n'
    << "beta2=" << fmt(c.train.beta2) << '\n'
    << "adam-eps=" << fmt(c.train.adam_eps) << '\n'
    << "steps-per-epoch=" << c.train.steps_per_epoch << '\n'
    << "max-steps=" << c.train.max_steps << '\n'
    << "d-model=" << c.dims.d_model << '\n'
    << "heads=" << c.dims.heads << '\n'
    << "layers=" << c.dims.layers << '\n'
    << "d-ff=" << c.dims.d_ff << '\n'
    << "max-len=" << c.dims.max_len << '\n';
  return o.str();
}

RunConfig default_run_config() {
  RunConfig c;
  // Ten regions of 1000 ten-minute samples each.
  c.synth_spec.num_tasks = 10;
  c.synth_spec.length = 1000;
  return c;
}

RunConfig resolve_config(const std::optional<std::string>& config_file, const std::map<std::string, std::string>& flags) {
  RunConfig cfg = default_run_config();
  if (config_file) apply_config_file(cfg, *config_file);
  for (const auto& [key, value] : flags) apply_setting(cfg, key, value);
  return cfg;
}

std::uint64_t data_seed(const RunConfig& cfg) { return cfg.train.seed; }
std::uint64_t model_seed(const RunConfig& cfg) { return cfg.train.seed + 0x9E3779B97F4A7C15ull; }

TrainConfig trainer_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = cfg.train.seed + 2 * 0x9E3779B97F4A7C15ull;
  return t;
}

MultiTaskDataset load_dataset(const RunConfig& cfg) {
  if (cfg.synth == !cfg.data_path.empty()) throw UsageError("exactly one of --data PATH or --synth is required");
  return cfg.synth ? synth_generate(cfg.resolved_synth()) : load_csv(cfg.data_path);
}

namespace {

ModelConfig model_for(const RunConfig& cfg, std::size_t tasks) {
  ModelConfig m = cfg.model_config();
  m.num_tasks = tasks;
  return m;
}

// Identity of a run for checkpoints: everything except the output directory.
std::string checkpoint_config_text(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.out_dir.clear();
  return echo_config(c);
}

}  // namespace

Checkpoint make_checkpoint(const RunConfig& cfg, const MultiTaskModel& model, const TrainProgress& progress,
                           const PreparedDataset& data) {
  Checkpoint ckpt;
  ckpt.config = checkpoint_config_text(cfg);
  for (const auto& [path, t] : model.params()) {
    Tensor copy(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    ckpt.parameters.emplace(path, std::move(copy));
  }
  ckpt.optimizer = progress.optimizer;
  ckpt.rng_state = rng_to_string(progress.rng);
  ckpt.epoch = progress.epoch;
  ckpt.step = progress.step;
  ckpt.best_validation = progress.best_validation;
  ckpt.best_epoch = progress.best_epoch;
  for (const PreparedTask& t : data.tasks) ckpt.normalization.emplace_back(t.task_id, t.norm);
  return ckpt;
}

Restored restore_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg = default_run_config();
  apply_config_text(cfg, ckpt.config);
  const std::size_t tasks = ckpt.normalization.size();
  MultiTaskModel model(model_for(cfg, tasks), model_seed(cfg));
  if (model.params().size() != ckpt.parameters.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, model expects " +
                          std::to_string(model.params().size()));
  }
  for (auto& [path, t] : model.params()) {
    auto it = ckpt.parameters.find(path);
    if (it == ckpt.parameters.end()) throw CheckpointError("checkpoint lacks parameter '" + path + "'");
    if (it->second.shape() != t.shape()) throw CheckpointError("checkpoint parameter '" + path + "' has the wrong shape");
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
  }
  TrainProgress progress;
  progress.optimizer = ckpt.optimizer;
  progress.rng = rng_from_string(ckpt.rng_state);
  progress.epoch = ckpt.epoch;
  progress.step = ckpt.step;
  progress.best_validation = ckpt.best_validation;
  progress.best_epoch = ckpt.best_epoch;
  std::vector<NormalizationParams> norms;
  for (const auto& kv : ckpt.normalization) norms.push_back(kv.second);
  return Restored{std::move(cfg), std::move(model), std::move(progress), std::move(norms)};
}

void write_step_log(std::ostream& out, const TrainingLog& log) {
  out << "step,epoch,task,loss,lr\n";
  for (const StepRecord& r : log.steps) {
    out << r.step << ',' << r.epoch << ',' << r.task << ',' << fmt(r.loss) << ',' << fmt(r.learning_rate) << '\n';
  }
}

void write_epoch_log(std::ostream& out, const TrainingLog& log) {
  out << "epoch,val_loss,lr\n";
  for (const EpochRecord& r : log.epochs) out << r.epoch << ',' << fmt(r.validation_loss) << ',' << fmt(r.learning_rate) << '\n';
}

double final_validation(const TrainingLog& log) {
  if (log.epochs.empty()) throw UsageError("no validation records");
  const std::size_t n = tail_count(log.epochs.size());
  double total = 0.0;
  for (std::size_t i = log.epochs.size() - n; i < log.epochs.size(); ++i) total += log.epochs[i].validation_loss;
  return total / static_cast<double>(n);
}

double early_loss(const TrainingLog& log) {
  if (log.steps.empty()) throw UsageError("no training steps");
  const std::size_t n = tail_count(log.steps.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += log.steps[i].loss;
  return total / static_cast<double>(n);
}

AblationResult run_ablation(const RunConfig& cfg) {
  const PreparedDataset data = PreparedDataset::prepare(load_dataset(cfg));
  ModelConfig base = model_for(cfg, data.num_tasks());
  std::vector<ModelConfig> configs;
  for (Scheme s : {Scheme::Global, Scheme::Hybrid}) {
    ModelConfig m = base;
    m.scheme = s;
    configs.push_back(m);
  }
  configs.push_back(matched_noshare(base));

  AblationResult result;
  std::vector<MultiTaskModel> models;
  for (const ModelConfig& m : configs) models.emplace_back(m, model_seed(cfg));
  const double noshare_params = static_cast<double>(models[2].audit().total);
  for (std::size_t i = 0; i < 2; ++i) {
    const double ref = static_cast<double>(models[i].audit().total);
    result.parameter_mismatch = std::max(result.parameter_mismatch, std::abs(noshare_params - ref) / ref);
  }
  if (result.parameter_mismatch > 0.05) {
    throw ConfigError("no-share baseline misses the sharing schemes' parameter count by " +
                      fmt(100.0 * result.parameter_mismatch) + "% (limit 5%)");
  }
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Trainer trainer(models[i], data, trainer_config(cfg), cfg.window);
    AblationRun run;
    run.scheme = configs[i].scheme;
    run.model = configs[i];
    run.parameters = models[i].audit().total;
    run.log = trainer.run();
    run.final_validation = final_validation(run.log);
    run.early_loss = early_loss(run.log);
    result.runs.push_back(std::move(run));
  }
  return result;
}

ModelDims tiny_dims() {
  ModelDims d;
  d.d_model = 8;
  d.heads = 2;
  d.layers = 2;
  d.d_ff = 16;
  d.max_len = 64;
  return d;
}

std::vector<GradcheckOutcome> run_gradcheck(const GradcheckOptions& options, std::uint64_t seed) {
  constexpr std::size_t kWindow = 5, kTasks = 2, kWindowsPerTask = 3, kMaxDraws = 1000;
  // Central differences carry round-off and truncation error that must stay
  // below the 1e-8 floor times the tolerance; a loss near zero keeps it there.
  constexpr double kTargetOffset = 0.01;
  // Perturbations of eps move a ReLU input by far less than this.
  constexpr double kKinkMargin = 1e-4;
  std::mt19937_64 rng(seed);

  std::vector<GradcheckOutcome> out;
  for (Scheme scheme : {Scheme::Global, Scheme::Hybrid, Scheme::NoShare}) {
    ModelConfig mc;
    mc.scheme = scheme;
    mc.num_tasks = kTasks;
    mc.dims = tiny_dims();
    mc.dropout = 0.1;
    MultiTaskModel model(mc, seed + 1);

    std::vector<Batch> batches;
    std::vector<Tensor> targets;
    std::size_t redraws = 0;
    for (;; ++redraws) {
      if (redraws == kMaxDraws) throw NumericError("gradcheck: no kink-free batch found");
      batches.clear();
      targets.clear();
      ad::Tape tape(0);
      for (std::size_t m = 0; m < kTasks; ++m) {
        std::vector<double> segment(kWindowsPerTask + kWindow);
        for (double& v : segment) v = 2.0 * ad::uniform01(rng) - 1.0;
        batches.push_back(make_batch(m, segment, kWindow, 0, kWindowsPerTask));
        Tensor t = model.forward(tape, m, batches[m].inputs, kWindow, false).value();
        t.drop_grad();
        for (double& v : t.data()) v += kTargetOffset * (2.0 * ad::uniform01(rng) - 1.0);
        targets.push_back(std::move(t));
      }
      if (tape.relu_margin() >= kKinkMargin) break;
    }

    const bool fault = options.inject_fault;
    LossBuilder loss = [&](ad::Tape& tape) {
      ad::Var total;
      for (std::size_t m = 0; m < kTasks; ++m) {
        ad::Var pred = model.forward(tape, m, batches[m].inputs, kWindow, false);
        if (fault && m == 0) pred = faulty_identity(pred);
        ad::Var l = ad::mse(pred, tape.constant(targets[m]));
        total = m == 0 ? l : ad::add(total, l);
      }
      return total;
    };
    out.push_back({scheme, finite_diff_check(loss, model.params(), options.eps), redraws});
  }
  return out;
}

int cmd_generate(const RunConfig& cfg, const std::string& output, std::ostream& out) {
  out << echo_config(cfg);
  if (!cfg.synth) throw UsageError("generate needs --synth");
  const MultiTaskDataset ds = synth_generate(cfg.resolved_synth());
  const fs::path path = output.empty() ? fs::path(cfg.out_dir) / "synth.csv" : fs::path(output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ostringstream csv;
  write_csv(csv, ds);
  write_file(path, csv.str());
  out << "task_id,n,mean,std,min,max\n";
  for (const TaskSeries& s : ds.tasks) {
    const double n = static_cast<double>(s.size());
    const double mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : s.values) var += (v - mean) * (v - mean);
    const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
    out << s.task_id << ',' << s.size() << ',' << fmt(mean) << ',' << fmt(std::sqrt(var / n)) << ',' << fmt(*lo) << ','
        << fmt(*hi) << '\n';
  }
  out << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, const TrainOptions& options, std::ostream& out) {
  out << echo_config(cfg);
  cfg.train.validate();
  const MultiTaskDataset raw = load_dataset(cfg);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  write_file(dir / "config.txt", echo_config(cfg));

  std::optional<Restored> resumed;
  if (!options.resume.empty()) {
    resumed.emplace(restore_checkpoint(load_checkpoint(options.resume)));
    if (checkpoint_config_text(resumed->config) != checkpoint_config_text([&] {
          RunConfig c = cfg;
          c.train.epochs = resumed->config.train.epochs;
          return c;
        }())) {
      throw ConfigError("resume checkpoint was produced by a different configuration");
    }
  }
  const PreparedDataset data =
      resumed ? PreparedDataset::prepare(raw, resumed->norms) : PreparedDataset::prepare(raw);
  MultiTaskModel model = resumed ? std::move(resumed->model) : MultiTaskModel(model_for(cfg, data.num_tasks()), model_seed(cfg));
  out << "parameters=" << model.audit().total << '\n';

  Trainer trainer(model, data, trainer_config(cfg), cfg.window);
  if (resumed) trainer.restore(std::move(resumed->progress));
  bool wrote_best = false;
  const TrainingLog log = trainer.run([&](const Trainer& t, const EpochRecord& rec, bool improved) {
    out << "epoch " << rec.epoch << " val_loss=" << fmt(rec.validation_loss) << " lr=" << fmt(rec.learning_rate)
        << (improved ? " *" : "") << '\n';
    const Checkpoint ckpt = make_checkpoint(cfg, t.model(), t.progress(), data);
    if (improved) {
      save_checkpoint((dir / "best.ckpt").string(), ckpt);
      wrote_best = true;
    }
    if (options.checkpoint_every && t.progress().epoch % options.checkpoint_every == 0) {
      save_checkpoint((dir / ("epoch_" + std::to_string(t.progress().epoch) + ".ckpt")).string(), ckpt);
    }
  });
  const Checkpoint final_ckpt = make_checkpoint(cfg, model, trainer.progress(), data);
  save_checkpoint((dir / "final.ckpt").string(), final_ckpt);
  if (!wrote_best && !fs::exists(dir / "best.ckpt")) save_checkpoint((dir / "best.ckpt").string(), final_ckpt);

  std::ostringstream steps, epochs;
  write_step_log(steps, log);
  write_epoch_log(epochs, log);
  write_file(dir / "train_log.csv", steps.str());
  write_file(dir / "val_log.csv", epochs.str());
  out << "steps=" << log.steps.size() << " epochs=" << log.epochs.size() << '\n';
  return kOk;
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& out) {
  const Split split = parse_split(options.split);
  if (options.checkpoint.empty()) throw UsageError("evaluate needs --checkpoint");
  const Restored r = restore_checkpoint(load_checkpoint(options.checkpoint));
  std::istringstream echo(echo_config(r.config));
  for (std::string line; std::getline(echo, line);) out << "# " << line << '\n';
  out << "# split=" << to_string(split) << '\n';
  const PreparedDataset data = PreparedDataset::prepare(load_dataset(r.config), r.norms);
  const MetricReport report = evaluate_model(r.model, data, split, r.config.window);
  std::ostringstream csv;
  write_report_csv(csv, report);
  if (options.output.empty()) {
    out << csv.str();
  } else {
    write_file(options.output, csv.str());
  }
  if (options.verbose) {
    out << "# normalized-scale metrics\n";
    write_report_csv(out, evaluate_model(r.model, data, split, r.config.window, false));
  }
  if (!options.dump_predictions.empty()) {
    std::ostringstream preds;
    write_predictions_csv(preds, collect_predictions(r.model, data, split, r.config.window));
    write_file(options.dump_predictions, preds.str());
  }
  out << "# mean corr=" << fmt(report.mean_corr) << " rmse=" << fmt(report.mean_rmse)
      << " smape=" << fmt(report.mean_smape) << '\n';
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  out << echo_config(cfg);
  cfg.train.validate();
  const AblationResult result = run_ablation(cfg);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  std::ostringstream summary, curves;
  summary << "scheme,parameters,final_val_loss,early_loss\n";
  std::vector<SchemeLog> logs;
  for (const AblationRun& run : result.runs) {
    const std::string name = to_string(run.scheme);
    std::ostringstream steps, epochs;
    write_step_log(steps, run.log);
    write_epoch_log(epochs, run.log);
    write_file(dir / (name + "_train_log.csv"), steps.str());
    write_file(dir / (name + "_val_log.csv"), epochs.str());
    summary << name << ',' << run.parameters << ',' << fmt(run.final_validation) << ',' << fmt(run.early_loss) << '\n';
    logs.push_back({name, &run.log});
  }
  export_curves(curves, logs);
  write_file(dir / "curves.csv", curves.str());
  write_file(dir / "summary.csv", summary.str());
  out << "parameter_mismatch=" << fmt(result.parameter_mismatch) << '\n' << summary.str();
  return kOk;
}

int cmd_forecast(const ForecastOptions& options, std::ostream& out) {
  if (options.checkpoint.empty()) throw UsageError("forecast needs --checkpoint");
  if (options.horizon < 1) throw UsageError("forecast horizon must be at least 1");
  const Restored r = restore_checkpoint(load_checkpoint(options.checkpoint));
  std::istringstream echo(echo_config(r.config));
  for (std::string line; std::getline(echo, line);) out << "# " << line << '\n';
  const PreparedDataset data = PreparedDataset::prepare(load_dataset(r.config), r.norms);
  std::size_t task = 0;
  try {
    task = data.find(options.task);
  } catch (const LookupError& e) {
    throw UsageError(e.what());
  }
  const PreparedTask& t = data.tasks[task];
  if (t.raw.size() < r.config.window) throw DataError("series shorter than the window");
  const std::span<const double> seed(t.raw.data() + t.raw.size() - r.config.window, r.config.window);
  const auto values = rollout_forecast(r.model, task, t.norm, seed, options.horizon);
  const std::int64_t step = t.timestamps.size() >= 2 ? t.timestamps[1] - t.timestamps[0] : 0;
  std::ostringstream csv;
  csv << "step,timestamp,value\n";
  for (std::size_t h = 0; h < values.size(); ++h) {
    csv << h + 1 << ',' << t.timestamps.back() + static_cast<std::int64_t>(h + 1) * step << ',' << fmt(values[h]) << '\n';
  }
  if (options.output.empty()) {
    out << csv.str();
  } else {
    write_file(options.output, csv.str());
  }
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& options, std::uint64_t seed, std::ostream& out) {
  out << "tolerance=" << fmt(options.tolerance) << "\neps=" << fmt(options.eps) << "\nseed=" << seed
      << "\ninject-fault=" << (options.inject_fault ? "true" : "false") << '\n';
  bool ok = true;
  for (const GradcheckOutcome& o : run_gradcheck(options, seed)) {
    const bool pass = o.report.passed(options.tolerance);
    ok = ok && pass;
    out << (pass ? "PASS " : "FAIL ") << to_string(o.scheme) << " worst_rel_err=" << fmt(o.report.worst) << " at "
        << o.report.worst_path << " (" << o.report.entries.size() << " parameter groups, " << o.redraws
        << " batch redraws)\n";
  }
  return ok ? kOk : kVerification;
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const LookupError& e) {
    err << "lookup error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const DeterminismError& e) {
    err << "verification failure: " << e.what() << '\n';
    return kVerification;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace mtl::cli
