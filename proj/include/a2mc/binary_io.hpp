#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "a2mc/error.hpp"

namespace a2mc {

// Little-endian primitive encoding on top of std::ostream.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename U>
    requires std::is_arithmetic_v<U>
  void put(U value) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
    }
    out_.write(reinterpret_cast<const char*>(bytes), sizeof(U));
    offset_ += sizeof(U);
  }

  void put_bytes(std::string_view bytes) {
    out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    offset_ += bytes.size();
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }

  std::uint64_t offset() const { return offset_; }
  bool good() const { return out_.good(); }

 private:
  std::ostream& out_;
  std::uint64_t offset_ = 0;
};

// Mirror of BinaryWriter; every short read raises FormatError naming the
// byte offset where the record ended early.
class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  template <typename U>
    requires std::is_arithmetic_v<U>
  U get(std::string_view what) {
    unsigned char bytes[sizeof(U)];
    read_raw(bytes, sizeof(U), what);
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
    }
    U value;
    std::memcpy(&value, bytes, sizeof(U));
    return value;
  }

  std::string get_bytes(std::size_t n, std::string_view what) {
    std::string s(n, '\0');
    read_raw(s.data(), n, what);
    return s;
  }

  std::string get_string(std::string_view what, std::uint32_t max_len = 1u << 26) {
    const auto n = get<std::uint32_t>(what);
    if (n > max_len) fail("implausible string length " + std::to_string(n) + " for " + std::string(what));
    return get_bytes(n, what);
  }

  void expect_magic(std::string_view magic) {
    const std::uint64_t at = offset_;
    const std::string got = get_bytes(magic.size(), "magic");
    if (got != magic) {
      throw FormatError("bad magic at offset " + std::to_string(at) + ": expected \"" +
                        std::string(magic) + "\"");
    }
  }

  // True when no bytes remain.
  bool at_end() {
    return in_.peek() == std::char_traits<char>::eof();
  }

  std::uint64_t offset() const { return offset_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(msg + " (offset " + std::to_string(offset_) + ")");
  }

 private:
  void read_raw(void* dst, std::size_t n, std::string_view what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      throw FormatError("truncated record: needed " + std::to_string(n) + " bytes for " +
                        std::string(what) + " at offset " + std::to_string(offset_) + ", got " +
                        std::to_string(got));
    }
    offset_ += n;
  }

  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace a2mc
