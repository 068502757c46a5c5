#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "widenet/core/parameter.hpp"

namespace widenet {

/// Binary layout, all integers and floats little-endian:
///   "WNCK" | u32 version | u64 config hash | u64 seed | u32 len, config JSON
///   u32 entry count, then per entry: u32 len, name | u64 rows | u64 cols | rows·cols f64 (row-major)
struct CheckpointEntry {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string config_json;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::string get_str(std::istream& in, std::size_t limit) {
  const std::uint32_t n = get_u32(in);
  if (n > limit) throw Error("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error("checkpoint: truncated file");
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  out.write("WNCK", 4);
  detail::put_u32(out, Checkpoint::kVersion);
  detail::put_u64(out, ck.config_hash);
  detail::put_u64(out, ck.seed);
  detail::put_str(out, ck.config_json);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (auto& e : ck.entries) {
    detail::put_str(out, e.name);
    detail::put_u64(out, static_cast<std::uint64_t>(e.value.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(e.value.cols()));
    for (Index i = 0; i < e.value.rows(); ++i)
      for (Index j = 0; j < e.value.cols(); ++j) detail::put_u64(out, std::bit_cast<std::uint64_t>(e.value(i, j)));
  }
  if (!out) throw Error("checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "WNCK", 4) != 0) throw Error("checkpoint: bad magic in " + path);
  if (const auto v = detail::get_u32(in); v != Checkpoint::kVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(v));
  Checkpoint ck;
  ck.config_hash = detail::get_u64(in);
  ck.seed = detail::get_u64(in);
  ck.config_json = detail::get_str(in, 1u << 26);
  const std::uint32_t n = detail::get_u32(in);
  for (std::uint32_t k = 0; k < n; ++k) {
    CheckpointEntry e;
    e.name = detail::get_str(in, 4096);
    const auto rows = detail::get_u64(in), cols = detail::get_u64(in);
    if (rows > (1u << 26) || cols > (1u << 26) || rows * cols > (1ull << 30))
      throw Error("checkpoint: implausible shape for " + e.name);
    e.value.resize(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < e.value.rows(); ++i)
      for (Index j = 0; j < e.value.cols(); ++j) e.value(i, j) = std::bit_cast<double>(detail::get_u64(in));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

/// Appends parameter values; names must be unique within the checkpoint.
inline void add_parameters(Checkpoint& ck, const ParamList& params) {
  for (auto* p : params) {
    if (ck.find(p->name)) throw Error("checkpoint: duplicate parameter name " + p->name);
    ck.entries.push_back({p->name, p->value});
  }
}

/// Restores every parameter in `params` by name; a missing name or shape
/// mismatch is an error. Entries not in `params` are ignored.
inline void restore_parameters(const Checkpoint& ck, const ParamList& params) {
  std::map<std::string, const CheckpointEntry*> index;
  for (auto& e : ck.entries) index[e.name] = &e;
  for (auto* p : params) {
    auto it = index.find(p->name);
    if (it == index.end()) throw Error("checkpoint: missing parameter " + p->name);
    require_same_shape(it->second->value, p->value, "checkpoint entry " + p->name);
    p->value = it->second->value;
  }
}

}  // namespace widenet
