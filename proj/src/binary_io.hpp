#pragma once

// Little-endian encoding helpers shared by the binary artifact containers.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>

#include "mts2graph/common.hpp"

namespace mts2graph::binary {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("container truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

inline void put_f32(std::string& out, double v) { put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline double get_f32(const std::string& in, std::size_t& pos) {
  return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, pos)));
}
inline void put_f64(std::string& out, double v) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(const std::string& in, std::size_t& pos) { return std::bit_cast<double>(get_le<std::uint64_t>(in, pos)); }

/// magic(8) | u32 version | u64 index length | index bytes | blob
inline std::string write_container(const char (&magic)[8], std::uint32_t version, const std::string& index,
                                   const std::string& blob) {
  std::string out(magic, 8);
  put_le<std::uint32_t>(out, version);
  put_le<std::uint64_t>(out, index.size());
  out += index;
  out += blob;
  return out;
}

struct Container {
  std::uint32_t version = 0;
  std::string index;
  std::size_t blob_start = 0;
};

inline Container read_container(const std::string& bytes, const char (&magic)[8], const std::string& what) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), magic, 8) != 0) throw Error(what + ": bad magic");
  std::size_t pos = 8;
  Container c;
  c.version = get_le<std::uint32_t>(bytes, pos);
  const auto len = get_le<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw Error(what + ": truncated index");
  c.index = bytes.substr(pos, len);
  c.blob_start = pos + len;
  return c;
}

}  // namespace mts2graph::binary
