#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/sprites.hpp"
#include "disent/tensor.hpp"

namespace disent {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// One named tensor in a checkpoint. dtype: 1 = f32, 2 = f64. raw holds
// little-endian element bytes.
struct TensorEntry {
  std::string name;
  std::uint8_t dtype = 0;
  Shape dims;
  std::vector<std::uint8_t> raw;
};

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::vector<TensorEntry> entries;
  std::string rng_state;
  std::uint64_t step = 0;

  const TensorEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

template <typename T>
constexpr std::uint8_t dtype_tag() {
  if constexpr (sizeof(T) == 4) return 1;
  else return 2;
}

template <typename T>
TensorEntry make_entry(const std::string& name, Shape dims, const std::vector<T>& data) {
  if (shape_numel(dims) != static_cast<std::int64_t>(data.size())) {
    throw std::logic_error("make_entry: dims do not match data for " + name);
  }
  TensorEntry e;
  e.name = name;
  e.dtype = dtype_tag<T>();
  e.dims = std::move(dims);
  e.raw.reserve(data.size() * sizeof(T));
  for (T v : data) {
    if constexpr (sizeof(T) == 4) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) e.raw.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    } else {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) e.raw.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return e;
}

// Copies an entry's payload into dst, insisting on the expected shape and
// dtype. context names the consumer for error messages.
template <typename T>
void read_entry_into(const TensorEntry& e, const Shape& expect, std::vector<T>& dst) {
  if (e.dtype != dtype_tag<T>()) {
    throw std::runtime_error("checkpoint parameter " + e.name + " has dtype tag " +
                             std::to_string(e.dtype) + ", expected " +
                             std::to_string(dtype_tag<T>()));
  }
  if (e.dims != expect) {
    throw std::runtime_error("checkpoint parameter " + e.name + " has shape " + shape_str(e.dims) +
                             ", model expects " + shape_str(expect));
  }
  std::size_t n = static_cast<std::size_t>(shape_numel(expect));
  dst.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if constexpr (sizeof(T) == 4) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(e.raw[i * 4 + b]) << (8 * b);
      dst[i] = std::bit_cast<T>(bits);
    } else {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(e.raw[i * 8 + b]) << (8 * b);
      dst[i] = std::bit_cast<T>(bits);
    }
  }
}

// Checkpoint layout: "DGAN1", u32 version, u32 entry count, per entry
// (u32 name length, name, u8 dtype, u32 rank, u64 dims, raw LE data),
// then u32 rng-state length, rng state, u64 step.
inline void save_checkpoint_file(const std::string& path, const CheckpointData& cp) {
  std::vector<std::uint8_t> out{'D', 'G', 'A', 'N', '1'};
  detail::put_u32le(out, cp.version);
  detail::put_u32le(out, static_cast<std::uint32_t>(cp.entries.size()));
  for (const auto& e : cp.entries) {
    detail::put_u32le(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(e.dtype);
    detail::put_u32le(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) detail::put_u64le(out, static_cast<std::uint64_t>(d));
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  detail::put_u32le(out, static_cast<std::uint32_t>(cp.rng_state.size()));
  out.insert(out.end(), cp.rng_state.begin(), cp.rng_state.end());
  detail::put_u64le(out, cp.step);

  std::string tmp = path + ".tmp";
  detail::write_file_bytes(tmp, out, "save_checkpoint");
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_checkpoint: rename to " + path + " failed");
  }
}

inline CheckpointData load_checkpoint_file(const std::string& path) {
  auto bytes = detail::read_file_bytes(path, "load_checkpoint");
  detail::ByteReader r{bytes.data(), bytes.size(), "load_checkpoint"};
  std::uint8_t magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, "DGAN1", 5) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file (bad magic)");
  }
  CheckpointData cp;
  cp.version = r.u32le();
  if (cp.version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(cp.version) +
                             ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  std::uint32_t count = r.u32le();
  cp.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    std::uint32_t name_len = r.u32le();
    r.need(name_len);
    e.name.assign(reinterpret_cast<const char*>(r.p), name_len);
    r.p += name_len;
    r.left -= name_len;
    r.need(1);
    e.dtype = *r.p++;
    r.left -= 1;
    if (e.dtype != 1 && e.dtype != 2) {
      throw std::runtime_error("load_checkpoint: entry " + e.name + " has unknown dtype tag");
    }
    std::uint32_t rank = r.u32le();
    e.dims.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d) e.dims[d] = static_cast<std::int64_t>(r.u64le());
    check_shape_valid(e.dims);
    std::size_t elem = e.dtype == 1 ? 4 : 8;
    std::size_t nbytes = static_cast<std::size_t>(shape_numel(e.dims)) * elem;
    e.raw.resize(nbytes);
    r.raw(e.raw.data(), nbytes);
    cp.entries.push_back(std::move(e));
  }
  std::uint32_t rng_len = r.u32le();
  r.need(rng_len);
  cp.rng_state.assign(reinterpret_cast<const char*>(r.p), rng_len);
  r.p += rng_len;
  r.left -= rng_len;
  cp.step = r.u64le();
  return cp;
}

}  // namespace disent
