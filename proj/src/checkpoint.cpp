// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtl/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

constexpr char kMagic[8] = {'M', 'T', 'L', 'A', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8;

class Writer {
 public:
  void u32(std::uint32_t v) { uint(v, 4); }
  void u64(std::uint64_t v) { uint(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }

  std::vector<std::uint8_t> bytes;

 private:
  void uint(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank < 1 || rank > 2) throw CheckpointError("tensor of unsupported rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    const std::size_t n = shape_numel(shape);
    need(n * 8);
    std::vector<double> values(n);
    for (double& v : values) v = f64();
    return Tensor(std::move(shape), std::move(values));
  }
  Reader sub(std::uint64_t n) {
    need(n);
    Reader r(data_ + pos_, n);
    pos_ += n;
    return r;
  }
  void tag(char out[4]) {
    need(4);
    std::memcpy(out, data_ + pos_, 4);
    pos_ += 4;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) throw TruncationError("checkpoint section ends early");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::uint64_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void put_section(Writer& out, const char (&tag)[5], const Writer& payload) {
  out.bytes.insert(out.bytes.end(), tag, tag + 4);
  out.u64(payload.bytes.size());
  out.bytes.insert(out.bytes.end(), payload.bytes.begin(), payload.bytes.end());
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream ss(text);
  ss >> rng;
  if (!ss) throw CheckpointError("corrupt RNG state");
  return rng;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer conf, parm, optm, rng, prog, norm;
  conf.str(ckpt.config);

  parm.u64(ckpt.parameters.size());
  for (const auto& [path, t] : ckpt.parameters) {
    parm.str(path);
    parm.tensor(t);
  }

  optm.u64(ckpt.optimizer.step);
  optm.f64(ckpt.optimizer.learning_rate);
  optm.u64(ckpt.optimizer.moments.size());
  for (const auto& [path, mom] : ckpt.optimizer.moments) {
    optm.str(path);
    optm.u64(mom.steps);
    optm.tensor(mom.m);
    optm.tensor(mom.v);
  }

  rng.str(ckpt.rng_state);

  prog.u64(ckpt.epoch);
  prog.u64(ckpt.step);
  prog.f64(ckpt.best_validation);
  prog.u64(ckpt.best_epoch);

  norm.u64(ckpt.normalization.size());
  for (const auto& [id, p] : ckpt.normalization) {
    norm.str(id);
    norm.f64(p.min);
    norm.f64(p.max);
  }

  Writer body;
  body.u32(6);
  put_section(body, "CONF", conf);
  put_section(body, "PARM", parm);
  put_section(body, "OPTM", optm);
  put_section(body, "RNG_", rng);
  put_section(body, "PROG", prog);
  put_section(body, "NORM", norm);

  Writer out;
  out.bytes.insert(out.bytes.end(), std::begin(kMagic), std::end(kMagic));
  out.u32(ckpt.version);
  out.u64(body.bytes.size());
  out.bytes.insert(out.bytes.end(), body.bytes.begin(), body.bytes.end());
  out.u32(crc_of(out.bytes.data(), out.bytes.size()));
  return std::move(out.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize + 4) throw TruncationError("checkpoint is truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  Reader header(bytes.data() + 8, kHeaderSize - 8);
  Checkpoint ckpt;
  ckpt.version = header.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(ckpt.version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t body_length = header.u64();
  if (bytes.size() < kHeaderSize + 4 || body_length > bytes.size() - kHeaderSize - 4) {
    throw TruncationError("checkpoint is truncated");
  }
  if (body_length != bytes.size() - kHeaderSize - 4) throw CheckpointError("trailing bytes after checkpoint body");
  const std::size_t crc_at = kHeaderSize + body_length;
  Reader trailer(bytes.data() + crc_at, 4);
  if (trailer.u32() != crc_of(bytes.data(), crc_at)) throw ChecksumError("checkpoint checksum mismatch");

  Reader body(bytes.data() + kHeaderSize, body_length);
  const std::uint32_t sections = body.u32();
  for (std::uint32_t s = 0; s < sections; ++s) {
    char tag[4];
    body.tag(tag);
    Reader r = body.sub(body.u64());
    const std::string name(tag, 4);
    if (name == "CONF") {
      ckpt.config = r.str();
    } else if (name == "PARM") {
      const std::uint64_t n = r.u64();
      for (std::uint64_t i = 0; i < n; ++i) {
        std::string path = r.str();
        ckpt.parameters.emplace(std::move(path), r.tensor());
      }
    } else if (name == "OPTM") {
      ckpt.optimizer.step = r.u64();
      ckpt.optimizer.learning_rate = r.f64();
      const std::uint64_t n = r.u64();
      for (std::uint64_t i = 0; i < n; ++i) {
        std::string path = r.str();
        AdamMoments mom;
        mom.steps = r.u64();
        mom.m = r.tensor();
        mom.v = r.tensor();
        ckpt.optimizer.moments.emplace(std::move(path), std::move(mom));
      }
    } else if (name == "RNG_") {
      ckpt.rng_state = r.str();
    } else if (name == "PROG") {
      ckpt.epoch = r.u64();
      ckpt.step = r.u64();
      ckpt.best_validation = r.f64();
      ckpt.best_epoch = r.u64();
    } else if (name == "NORM") {
      const std::uint64_t n = r.u64();
      for (std::uint64_t i = 0; i < n; ++i) {
        std::string id = r.str();
        NormalizationParams p;
        p.min = r.f64();
        p.max = r.f64();
        ckpt.normalization.emplace_back(std::move(id), p);
      }
    }
    // Unknown sections are skipped.
  }
  if (!body.done()) throw CheckpointError("unexpected bytes after the last section");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mtl
