#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>

#include "oampsa/error.hpp"

namespace oampsa::io {

class TruncatedFileError : public DataError {
 public:
  explicit TruncatedFileError(const std::string& what) : DataError("truncated file: " + what) {}
};

class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& what) : DataError("format error: " + what) {}
};

template <typename T>
T to_little_endian(T value) {
  static_assert(std::is_integral_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    T out{};
    auto* src = reinterpret_cast<const unsigned char*>(&value);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  } else {
    return value;
  }
}

/// Little-endian binary writer over an owned output file.
class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot open '" + path.string() + "' for writing");
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw DataError("write failed on '" + path_.string() + "'");
  }
  template <typename T>
  void integer(T value) {
    const T le = to_little_endian(value);
    bytes(&le, sizeof(T));
  }
  void u16(std::uint16_t v) { integer(v); }
  void u32(std::uint32_t v) { integer(v); }
  void u64(std::uint64_t v) { integer(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void close() {
    out_.close();
    if (!out_) throw DataError("closing '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Little-endian reader over a whole file held in memory; every read is
/// bounds-checked and reports truncation with the path and offset.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    data_.resize(size);
    if (size > 0) in.read(data_.data(), static_cast<std::streamsize>(size));
    if (!in) throw DataError("read failed on '" + path.string() + "'");
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  const std::filesystem::path& path() const { return path_; }

  void require(std::size_t n) const {
    if (remaining() < n) {
      throw TruncatedFileError("'" + path_.string() + "' needs " + std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + ", " + std::to_string(remaining()) + " left");
    }
  }

  void bytes(void* dst, std::size_t n) {
    require(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T integer() {
    T raw{};
    bytes(&raw, sizeof(T));
    return to_little_endian(raw);
  }
  std::uint16_t u16() { return integer<std::uint16_t>(); }
  std::uint32_t u32() { return integer<std::uint32_t>(); }
  std::uint64_t u64() { return integer<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(u64()); }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError("'" + path_.string() + "' has " + std::to_string(remaining()) + " unexpected trailing bytes");
    }
  }

 private:
  std::filesystem::path path_;
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace oampsa::io
