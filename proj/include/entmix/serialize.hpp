#pragma once

//! Binary tensor files.
//!
//! Layout (little-endian):
//!   magic "EMT1" | u32 rank | u64 dim[rank] | per leg: u16 label length +
//!   label bytes | payload: interleaved real/imaginary 64-bit floats |
//!   u64 FNV-1a checksum of all preceding bytes.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "entmix/tensor.hpp"

namespace entmix {

namespace detail {

inline void fnv1a(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

struct HashedWriter {
  std::ofstream out;
  std::uint64_t hash = 14695981039346656037ULL;
  void write(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    fnv1a(hash, p, n);
  }
  template <typename T>
  void write_pod(T v) {
    write(&v, sizeof(T));
  }
};

struct HashedReader {
  std::ifstream in;
  std::uint64_t hash = 14695981039346656037ULL;
  void read(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("tensor file truncated");
    fnv1a(hash, p, n);
  }
  template <typename T>
  T read_pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
};

}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const DenseTensor& t) {
  detail::HashedWriter w;
  w.out.open(path, std::ios::binary | std::ios::trunc);
  if (!w.out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));

  w.write("EMT1", 4);
  w.write_pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) w.write_pod<std::uint64_t>(static_cast<std::uint64_t>(t.dim(i)));
  for (int i = 0; i < t.rank(); ++i) {
    const std::string label = t.legs().empty() ? std::string{} : t.legs()[static_cast<std::size_t>(i)];
    w.write_pod<std::uint16_t>(static_cast<std::uint16_t>(label.size()));
    if (!label.empty()) w.write(label.data(), label.size());
  }
  for (long i = 0; i < t.size(); ++i) {
    w.write_pod<double>(t[i].real());
    w.write_pod<double>(t[i].imag());
  }
  const std::uint64_t h = w.hash;
  w.out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  if (!w.out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

inline DenseTensor read_tensor(const std::filesystem::path& path) {
  detail::HashedReader r;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw std::runtime_error(fmt::format("cannot open {} for reading", path.string()));

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "EMT1", 4) != 0)
    throw std::runtime_error(fmt::format("{}: not a tensor file (bad magic)", path.string()));

  const auto rank = r.read_pod<std::uint32_t>();
  if (rank > 64) throw std::runtime_error(fmt::format("{}: implausible rank {}", path.string(), rank));
  std::vector<long> shape(rank);
  for (auto& d : shape) d = static_cast<long>(r.read_pod<std::uint64_t>());
  std::vector<std::string> legs(rank);
  bool any_label = false;
  for (auto& label : legs) {
    const auto len = r.read_pod<std::uint16_t>();
    label.resize(len);
    if (len > 0) {
      r.read(label.data(), len);
      any_label = true;
    }
  }
  DenseTensor t(shape, any_label ? legs : std::vector<std::string>{});
  for (long i = 0; i < t.size(); ++i) {
    const double re = r.read_pod<double>();
    const double im = r.read_pod<double>();
    t[i] = cd(re, im);
  }
  const std::uint64_t expected = r.hash;
  std::uint64_t stored = 0;
  r.in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!r.in || stored != expected)
    throw std::runtime_error(fmt::format("{}: checksum mismatch (corrupted file)", path.string()));
  return t;
}

}  // namespace entmix
