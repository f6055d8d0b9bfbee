// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint layout (all integers and floats little-endian):
//
//   magic        8 bytes  "MTLACKPT"
//   version      u32      kCheckpointVersion
//   body_length  u64      bytes between this field and the CRC
//   sections     u32 count, then per section:
//                  tag u8[4], length u64, payload
//   crc32        u32      CRC-32 of every preceding byte
//
// Sections: CONF (key=value text), PARM (tensors by path), OPTM (AdamW
// state), RNG_ (engine state text), PROG (loop counters), NORM (per-task
// scaling). Floats are stored as raw IEEE-754 bits, so a round trip is exact.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/tensor.hpp"
#include "mtl/training.hpp"

namespace mtl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;
  std::map<std::string, Tensor> parameters;
  OptimizerState optimizer;
  std::string rng_state;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double best_validation = 0.0;
  std::size_t best_epoch = 0;
  std::vector<std::pair<std::string, NormalizationParams>> normalization;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws VersionError, TruncationError, ChecksumError or CheckpointError.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Helpers to move trainer state in and out of a checkpoint.
std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& text);

}  // namespace mtl
