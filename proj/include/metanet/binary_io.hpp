#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "metanet/error.hpp"

namespace metanet::detail {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

/// Little-endian writer that counts emitted bytes.
class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    value = byteswap_if_big(value);
    raw(&value, sizeof(T));
  }

  void raw(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed after " + std::to_string(written_) + " bytes");
    written_ += n;
  }

  void text(const std::string& s) { raw(s.data(), s.size()); }

  std::uint64_t written() const { return written_; }

 private:
  std::ostream& out_;
  std::uint64_t written_ = 0;
};

/// Little-endian reader that tracks its offset for error reporting.
class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    T value;
    raw(&value, sizeof(T), what);
    return byteswap_if_big(value);
  }

  void raw(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) throw FormatError(std::string("truncated ") + what, offset_ + got);
    offset_ += n;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace metanet::detail
