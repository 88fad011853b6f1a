#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iterator>
#include <type_traits>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fmnet/errors.hpp"
#include "fmnet/tensor.hpp"

namespace fmnet {

// Tensor container: 16-byte header (magic "FMT1", dtype u32 LE with 1 = f32
// and 2 = f64, ndim u32 LE, reserved u32 LE = 0), then ndim u64 LE dims,
// then the row-major payload, little-endian.
namespace container {

constexpr char kMagic[4] = {'F', 'M', 'T', '1'};
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::uint32_t kDtypeF64 = 2;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kMaxDims = 16;

template <class T>
constexpr std::uint32_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? kDtypeF32 : kDtypeF64;
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace container

template <class T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::string buf;
  buf.reserve(container::kHeaderBytes + 8 * t.ndim() + sizeof(T) * t.numel());
  buf.append(container::kMagic, 4);
  container::put_u32(buf, container::dtype_code<T>());
  container::put_u32(buf, static_cast<std::uint32_t>(t.ndim()));
  container::put_u32(buf, 0);  // reserved
  for (std::size_t d : t.shape) container::put_u64(buf, d);
  static_assert(std::endian::native == std::endian::little,
                "payload serialization assumes a little-endian host");
  buf.append(reinterpret_cast<const char*>(t.data.data()), sizeof(T) * t.numel());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("short write: " + path.string());
}

template <class T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for reading: " + path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& what, std::size_t offset) {
    throw DataError(path.string() + ": " + what + " at byte offset " +
                    std::to_string(offset));
  };
  if (raw.size() < container::kHeaderBytes) fail("truncated header", raw.size());
  if (std::memcmp(raw.data(), container::kMagic, 4) != 0) fail("bad magic", 0);
  const std::uint32_t dtype = container::get_u32(raw.data() + 4);
  if (dtype != container::dtype_code<T>()) {
    if (dtype != container::kDtypeF32 && dtype != container::kDtypeF64)
      fail("unknown dtype code " + std::to_string(dtype), 4);
    fail("dtype mismatch (file has code " + std::to_string(dtype) + ")", 4);
  }
  const std::uint32_t ndim = container::get_u32(raw.data() + 8);
  if (ndim > container::kMaxDims) fail("dim count overflow (" + std::to_string(ndim) + ")", 8);
  std::size_t off = container::kHeaderBytes;
  if (raw.size() < off + 8 * ndim) fail("truncated dims", raw.size());
  Shape shape(ndim);
  std::uint64_t numel = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = static_cast<std::size_t>(container::get_u64(raw.data() + off));
    if (shape[i] == 0) fail("zero dim", off);
    if (numel > (std::uint64_t(1) << 40) / shape[i]) fail("dim overflow", off);
    numel *= shape[i];
    off += 8;
  }
  if (raw.size() != off + sizeof(T) * numel)
    fail("payload size mismatch (expected " + std::to_string(off + sizeof(T) * numel) +
             " bytes, file has " + std::to_string(raw.size()) + ")",
         off);
  Tensor<T> t(shape);
  std::memcpy(t.data.data(), raw.data() + off, sizeof(T) * numel);
  return t;
}

// Ordered parameter set; iteration order (lexicographic by name) is the
// canonical update order for the optimizer.
template <class T>
struct ParamStore {
  std::map<std::string, Tensor<T>> params;

  Tensor<T>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  void add(const std::string& name, Tensor<T> t) {
    if (!params.emplace(name, std::move(t)).second)
      throw ConfigError("duplicate parameter: " + name);
  }
  bool has(const std::string& name) const { return params.count(name) > 0; }
  std::size_t size() const { return params.size(); }
};

}  // namespace fmnet
