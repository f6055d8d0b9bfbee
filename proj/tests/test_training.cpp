// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mtl/errors.hpp"
#include "mtl/training.hpp"
#include "support.hpp"

namespace mtl {
namespace {

ModelConfig tiny_model(Scheme s, std::size_t tasks) {
  ModelConfig c;
  c.scheme = s;
  c.num_tasks = tasks;
  c.dims.d_model = 8;
  c.dims.heads = 2;
  c.dims.d_ff = 16;
  c.dims.max_len = 64;
  return c;
}

PreparedDataset small_data(std::size_t tasks = 2, std::size_t length = 200, std::uint64_t seed = 3) {
  SynthSpec spec;
  spec.num_tasks = tasks;
  spec.length = length;
  spec.seed = seed;
  return PreparedDataset::prepare(synth_generate(spec));
}

TrainConfig fast_config(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.steps_per_epoch = 5;
  c.seed = 7;
  return c;
}

void expect_same_params(const MultiTaskModel& a, const MultiTaskModel& b) {
  for (const auto& [path, t] : a.params()) {
    const Tensor& u = b.params().at(path);
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(t[i], u[i]) << path << "[" << i << "]";
  }
}

TEST(L2Loss, Values) {
  const std::vector<double> a = {1, 2}, z = {0, 0}, b = {2, 3};
  EXPECT_EQ(l2_loss(a, a), 0.0);
  EXPECT_EQ(l2_loss(b, a), 1.0);
  EXPECT_EQ(l2_loss(a, z), 2.5);
  EXPECT_THROW(l2_loss(a, std::vector<double>{1}), DimensionError);
}

TEST(SampleTask, Frequencies) {
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> one = {17};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_task(rng, one), 0u);
  const std::vector<std::size_t> lopsided = {100, 0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_task(rng, lopsided), 0u);
  const std::vector<std::size_t> equal = {5, 5, 5, 5};
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 100000; ++i) ++hits[sample_task(rng, equal)];
  for (int h : hits) EXPECT_NEAR(h / 1e5, 0.25, 0.01);
  const std::vector<std::size_t> weighted = {1, 3};
  int ones = 0;
  for (int i = 0; i < 100000; ++i) ones += sample_task(rng, weighted) == 1;
  EXPECT_NEAR(ones / 1e5, 0.75, 0.01);
}

ParameterSet grads_of(std::initializer_list<double> g) {
  ParameterSet ps;
  Tensor& t = ps.add("p", Tensor({g.size()}));
  std::copy(g.begin(), g.end(), t.grad().begin());
  return ps;
}

double grad_norm(ParameterSet& ps) {
  double sq = 0.0;
  for (auto& [path, t] : ps) {
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

TEST(ClipGradNorm, Cases) {
  ParameterSet small = grads_of({0.3, 0.4});
  EXPECT_EQ(clip_grad_norm(small, 0.7), 1.0);
  EXPECT_EQ(small.at("p").grad()[0], 0.3);

  ParameterSet crafted = grads_of({0.0, 1.4});
  EXPECT_DOUBLE_EQ(clip_grad_norm(crafted, 0.7), 0.5);

  ParameterSet doubled = grads_of({1.2, -1.6});
  clip_grad_norm(doubled, 0.7);
  EXPECT_NEAR(grad_norm(doubled), 0.7, 1e-15);
  EXPECT_NEAR(doubled.at("p").grad()[0] / doubled.at("p").grad()[1], 1.2 / -1.6, 1e-15);
}

TEST(ClipGradNorm, PropertyNormBounded) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    ParameterSet ps;
    for (int k = 0; k < 3; ++k) {
      Tensor& t = ps.add("p" + std::to_string(k), Tensor({5}));
      for (double& g : t.grad()) g = n(rng);
    }
    clip_grad_norm(ps, 0.7);
    EXPECT_LE(grad_norm(ps), 0.7 + 1e-12);
  }
}

TEST(LearningRate, GeometricSchedule) {
  TrainConfig c;
  for (std::size_t e = 0; e < 50; ++e) EXPECT_NEAR(c.learning_rate_at(e), 3e-4 * std::pow(0.95, e), 1e-15);
  c.decay_step = 2.0;
  EXPECT_EQ(c.learning_rate_at(3), c.learning_rate_at(2));
  EXPECT_LT(c.learning_rate_at(4), c.learning_rate_at(3));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AdamW, FirstStepMatchesFormula) {
  ParameterSet ps;
  Tensor& p = ps.add("w", Tensor::row({0.5, -2.0, 0.0}));
  const std::vector<double> g = {0.1, -0.3, 0.0};
  std::copy(g.begin(), g.end(), p.grad().begin());
  TrainConfig c;
  OptimizerState st;
  st.learning_rate = 1e-2;
  const std::vector<std::string> paths = {"w"};
  adamw_update(ps, paths, c, st);
  const double theta[] = {0.5, -2.0, 0.0};
  for (std::size_t i = 0; i < 3; ++i) {
    // First step: bias-corrected m = g and v = g^2.
    const double decayed = theta[i] - 1e-2 * 0.01 * theta[i];
    const double expected = decayed - 1e-2 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(p[i], expected, 1e-15);
  }
  EXPECT_EQ(st.step, 1u);
  EXPECT_EQ(st.moments.at("w").steps, 1u);
}

TEST(AdamW, UntouchedMomentsStayPut) {
  ParameterSet ps;
  ps.add("a", Tensor({2}, 1.0)).grad()[0] = 1.0;
  ps.add("b", Tensor({2}, 1.0)).grad()[0] = 1.0;
  TrainConfig c;
  OptimizerState st;
  st.learning_rate = 1e-3;
  const std::vector<std::string> both = {"a", "b"}, only_a = {"a"};
  adamw_update(ps, both, c, st);
  const Tensor vb = st.moments.at("b").v;
  const double b0 = ps.at("b")[0];
  adamw_update(ps, only_a, c, st);
  EXPECT_EQ(st.moments.at("a").steps, 2u);
  EXPECT_EQ(st.moments.at("b").steps, 1u);
  EXPECT_EQ(st.moments.at("b").v[0], vb[0]);
  EXPECT_EQ(ps.at("b")[0], b0);
}

TEST(MakeBatch, StacksConsecutiveWindows) {
  const std::vector<double> seg = {0, 1, 2, 3, 4, 5, 6};
  const Batch b = make_batch(1, seg, 3, 2, 2);
  EXPECT_EQ(b.inputs.shape(), (Shape{6, 1}));
  const double in[] = {2, 3, 4, 3, 4, 5}, out[] = {3, 4, 5, 4, 5, 6};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(b.inputs[i], in[i]);
    EXPECT_EQ(b.targets[i], out[i]);
  }
  EXPECT_THROW(make_batch(0, seg, 3, 3, 2), DataError);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  MultiTaskModel model(tiny_model(Scheme::Hybrid, 2), 1);
  const MultiTaskModel before(model);
  const PreparedDataset data = small_data();
  TrainConfig c;
  c.learning_rate = 0.0;
  OptimizerState st;
  const double loss = train_step(model, make_batch(0, data.tasks[0].segment(Split::Train), 8, 0, 4), c, st, 1);
  EXPECT_TRUE(std::isfinite(loss));
  expect_same_params(model, before);
}

TEST(TrainStep, ZeroModelOnZeroSeries) {
  MultiTaskModel model(tiny_model(Scheme::Global, 1), 1);
  for (auto& [path, t] : model.params()) {
    for (double& v : t.data()) v = 0.0;
  }
  const std::vector<double> zeros(20, 0.0);
  OptimizerState st;
  st.learning_rate = 3e-4;
  EXPECT_EQ(train_step(model, make_batch(0, zeros, 5, 0, 4), TrainConfig{}, st, 0), 0.0);
}

TEST(TrainStep, OtherTasksUntouched) {
  for (Scheme s : {Scheme::Global, Scheme::Hybrid, Scheme::NoShare}) {
    MultiTaskModel model(tiny_model(s, 3), 2);
    const MultiTaskModel before(model);
    const PreparedDataset data = small_data(3);
    OptimizerState st;
    st.learning_rate = 1e-3;
    train_step(model, make_batch(1, data.tasks[1].segment(Split::Train), 8, 0, 4), TrainConfig{}, st, 3);
    bool shared_moved = false, own_moved = false;
    for (const auto& [path, t] : model.params()) {
      const Tensor& u = before.params().at(path);
      bool moved = false;
      for (std::size_t i = 0; i < t.size(); ++i) moved = moved || t[i] != u[i];
      if (path.rfind("task/0/", 0) == 0 || path.rfind("task/2/", 0) == 0) {
        EXPECT_FALSE(moved) << path;
      } else if (path.rfind("shared/", 0) == 0) {
        shared_moved = shared_moved || moved;
      } else {
        own_moved = own_moved || moved;
      }
    }
    EXPECT_TRUE(own_moved);
    EXPECT_EQ(shared_moved, s != Scheme::NoShare);
  }
}

TEST(TrainStep, NonFiniteLossIsDivergence) {
  MultiTaskModel model(tiny_model(Scheme::NoShare, 1), 3);
  model.params().at("task/0/output/b")[0] = std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> seg(20, 0.5);
  OptimizerState st;
  st.learning_rate = 1e-3;
  EXPECT_THROW(train_step(model, make_batch(0, seg, 5, 0, 2), TrainConfig{}, st, 0), DivergenceError);
}

TEST(SplitLoss, MatchesPooledMean) {
  const MultiTaskModel model(tiny_model(Scheme::Hybrid, 2), 4);
  const PreparedDataset data = small_data();
  const std::size_t window = 6;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t m = 0; m < 2; ++m) {
    const auto seg = data.tasks[m].segment(Split::Validation);
    for (std::size_t w = 0; w + window < seg.size(); ++w) {
      const auto pred = model.predict_sequence(m, seg.subspan(w, window));
      for (std::size_t t = 0; t < window; ++t) {
        total += (pred[t] - seg[w + t + 1]) * (pred[t] - seg[w + t + 1]);
        ++count;
      }
    }
  }
  EXPECT_NEAR(split_loss(model, data, Split::Validation, window), total / static_cast<double>(count), 1e-12);
}

TEST(Trainer, ZeroEpochs) {
  MultiTaskModel model(tiny_model(Scheme::Global, 2), 5);
  const MultiTaskModel before(model);
  const PreparedDataset data = small_data();
  Trainer trainer(model, data, fast_config(0), 8);
  const TrainingLog log = trainer.run();
  EXPECT_TRUE(log.steps.empty());
  EXPECT_TRUE(log.epochs.empty());
  expect_same_params(model, before);
}

TEST(Trainer, DefaultStepsPerEpoch) {
  MultiTaskModel model(tiny_model(Scheme::Global, 2), 5);
  const PreparedDataset data = small_data();
  TrainConfig c = fast_config();
  c.steps_per_epoch = 0;
  Trainer trainer(model, data, c, 8);
  // 120 training points per task, windows of 8.
  EXPECT_EQ(trainer.steps_per_epoch(), (2u * 112 + 7) / 8);
  EXPECT_THROW(Trainer(model, data, c, 120), DataError);
}

TEST(Trainer, DeterministicAndLogsSchedule) {
  const PreparedDataset data = small_data();
  TrainConfig c = fast_config(3);
  MultiTaskModel a(tiny_model(Scheme::Hybrid, 2), 6), b(tiny_model(Scheme::Hybrid, 2), 6);
  const TrainingLog la = Trainer(a, data, c, 8).run();
  const TrainingLog lb = Trainer(b, data, c, 8).run();
  ASSERT_EQ(la.steps.size(), 15u);
  for (std::size_t i = 0; i < la.steps.size(); ++i) {
    EXPECT_EQ(la.steps[i].loss, lb.steps[i].loss);
    EXPECT_EQ(la.steps[i].task, lb.steps[i].task);
    EXPECT_EQ(la.steps[i].learning_rate, c.learning_rate_at(la.steps[i].epoch));
  }
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(la.epochs[e].validation_loss, lb.epochs[e].validation_loss);
    EXPECT_NEAR(la.epochs[e].learning_rate, 3e-4 * std::pow(0.95, e), 1e-15);
  }
  expect_same_params(a, b);
}

TEST(Trainer, MaxStepsCap) {
  MultiTaskModel model(tiny_model(Scheme::Global, 2), 7);
  const PreparedDataset data = small_data();
  TrainConfig c = fast_config(10);
  c.max_steps = 7;
  const TrainingLog log = Trainer(model, data, c, 8).run();
  EXPECT_EQ(log.steps.size(), 7u);
  EXPECT_EQ(log.epochs.size(), 2u);
}

TEST(Trainer, ResumeEqualsStraightThrough) {
  const PreparedDataset data = small_data();
  MultiTaskModel straight(tiny_model(Scheme::Global, 2), 8);
  MultiTaskModel first(straight);
  const TrainingLog full = Trainer(straight, data, fast_config(4), 8).run();

  TrainProgress saved;
  Trainer part(first, data, fast_config(2), 8);
  part.run();
  saved = part.progress();
  MultiTaskModel resumed(first);
  Trainer rest(resumed, data, fast_config(4), 8);
  rest.restore(saved);
  const TrainingLog tail = rest.run();
  ASSERT_EQ(tail.steps.size(), 10u);
  for (std::size_t i = 0; i < tail.steps.size(); ++i) EXPECT_EQ(tail.steps[i].loss, full.steps[10 + i].loss);
  expect_same_params(straight, resumed);
}

TEST(Trainer, BestValidationAndHook) {
  MultiTaskModel model(tiny_model(Scheme::NoShare, 2), 9);
  const PreparedDataset data = small_data();
  std::size_t calls = 0;
  double best = std::numeric_limits<double>::infinity();
  Trainer trainer(model, data, fast_config(3), 8);
  trainer.run([&](const Trainer&, const EpochRecord& rec, bool improved) {
    ++calls;
    EXPECT_EQ(improved, rec.validation_loss < best);
    best = std::min(best, rec.validation_loss);
  });
  EXPECT_EQ(calls, 3u);
  EXPECT_EQ(trainer.progress().best_validation, best);
}

TEST(Trainer, LearnsNoiselessSine) {
  MultiTaskDataset ds;
  TaskSeries s{"sine", {}, {}};
  for (std::size_t t = 0; t < 600; ++t) {
    s.timestamps.push_back(static_cast<std::int64_t>(600 * t));
    s.values.push_back(std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 24.0));
  }
  ds.tasks.push_back(s);
  const PreparedDataset data = PreparedDataset::prepare(ds);
  MultiTaskModel model(tiny_model(Scheme::Hybrid, 1), 10);
  TrainConfig c;
  c.epochs = 1;
  c.steps_per_epoch = 200;
  c.batch_size = 16;
  c.dropout = 0.0;
  const TrainingLog log = Trainer(model, data, c, 16).run();
  auto mean = [&](std::size_t from, std::size_t to) {
    double t = 0.0;
    for (std::size_t i = from; i < to; ++i) t += log.steps[i].loss;
    return t / static_cast<double>(to - from);
  };
  EXPECT_LT(mean(190, 200), 0.5 * mean(0, 10));
}

}  // namespace
}  // namespace mtl
