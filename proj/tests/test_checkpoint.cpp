// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "mtl/checkpoint.hpp"
#include "mtl/errors.hpp"

namespace mtl {
namespace {

Checkpoint trained_checkpoint() {
  SynthSpec spec;
  spec.num_tasks = 2;
  spec.length = 200;
  const PreparedDataset data = PreparedDataset::prepare(synth_generate(spec));
  ModelConfig mc;
  mc.scheme = Scheme::Hybrid;
  mc.num_tasks = 2;
  mc.dims.d_model = 8;
  mc.dims.heads = 2;
  mc.dims.d_ff = 16;
  mc.dims.max_len = 64;
  MultiTaskModel model(mc, 1);
  TrainConfig tc;
  tc.epochs = 2;
  tc.steps_per_epoch = 3;
  tc.batch_size = 4;
  Trainer trainer(model, data, tc, 8);
  trainer.run();

  Checkpoint c;
  c.config = "scheme=hybrid\nd-model=8\n";
  for (const auto& [path, t] : model.params()) c.parameters.emplace(path, Tensor(t.shape(), {t.data().begin(), t.data().end()}));
  const TrainProgress& p = trainer.progress();
  c.optimizer = p.optimizer;
  c.rng_state = rng_to_string(p.rng);
  c.epoch = p.epoch;
  c.step = p.step;
  c.best_validation = p.best_validation;
  c.best_epoch = p.best_epoch;
  for (const PreparedTask& t : data.tasks) c.normalization.emplace_back(t.task_id, t.norm);
  return c;
}

void expect_bitwise(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  EXPECT_EQ(std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)), 0);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const Checkpoint c = trained_checkpoint();
  const std::vector<std::uint8_t> bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  EXPECT_EQ(d.version, kCheckpointVersion);
  EXPECT_EQ(d.config, c.config);
  ASSERT_EQ(d.parameters.size(), c.parameters.size());
  for (const auto& [path, t] : c.parameters) expect_bitwise(t, d.parameters.at(path));
  EXPECT_EQ(d.optimizer.step, c.optimizer.step);
  EXPECT_EQ(d.optimizer.learning_rate, c.optimizer.learning_rate);
  ASSERT_EQ(d.optimizer.moments.size(), c.optimizer.moments.size());
  for (const auto& [path, m] : c.optimizer.moments) {
    const AdamMoments& n = d.optimizer.moments.at(path);
    EXPECT_EQ(n.steps, m.steps);
    expect_bitwise(m.m, n.m);
    expect_bitwise(m.v, n.v);
  }
  EXPECT_EQ(d.rng_state, c.rng_state);
  EXPECT_EQ(rng_from_string(d.rng_state), rng_from_string(c.rng_state));
  EXPECT_EQ(d.epoch, 2u);
  EXPECT_EQ(d.step, 6u);
  EXPECT_EQ(d.best_validation, c.best_validation);
  EXPECT_EQ(d.best_epoch, c.best_epoch);
  ASSERT_EQ(d.normalization.size(), 2u);
  EXPECT_EQ(d.normalization[1].first, "task2");
  EXPECT_EQ(d.normalization[1].second.min, c.normalization[1].second.min);
  EXPECT_EQ(encode_checkpoint(d), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const Checkpoint c = trained_checkpoint();
  const auto path = std::filesystem::temp_directory_path() / "mtl_ckpt_roundtrip.ckpt";
  save_checkpoint(path.string(), c);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path.string())), encode_checkpoint(c));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), CheckpointError);
}

TEST(Checkpoint, InfiniteBestSurvives) {
  Checkpoint c;
  c.best_validation = std::numeric_limits<double>::infinity();
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(c)).best_validation, c.best_validation);
}

TEST(Checkpoint, CorruptTrailingByte) {
  std::vector<std::uint8_t> bytes = encode_checkpoint(trained_checkpoint());
  bytes.back() ^= 0x01;
  EXPECT_THROW(decode_checkpoint(bytes), ChecksumError);
}

TEST(Checkpoint, CorruptBodyByte) {
  std::vector<std::uint8_t> bytes = encode_checkpoint(trained_checkpoint());
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(bytes), ChecksumError);
}

TEST(Checkpoint, UnsupportedVersion) {
  std::vector<std::uint8_t> bytes = encode_checkpoint(trained_checkpoint());
  bytes[8] = 2;  // little-endian version field follows the magic
  EXPECT_THROW(decode_checkpoint(bytes), VersionError);
}

TEST(Checkpoint, Truncated) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(trained_checkpoint());
  for (std::size_t keep : {std::size_t{0}, std::size_t{10}, std::size_t{24}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(decode_checkpoint(cut), TruncationError) << keep;
  }
}

TEST(Checkpoint, BadMagic) {
  std::vector<std::uint8_t> bytes = encode_checkpoint(Checkpoint{});
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

}  // namespace
}  // namespace mtl
