#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "msmil/error.hpp"

namespace msmil {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  template <typename T>
  void put(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }
  void u8(std::uint8_t v) { put(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(v); }
  void f64(double v) { put(v); }

  const std::string& buffer() const noexcept { return buf_; }

 private:
  std::string buf_;
};

/// Bounds-checked little-endian reader; every failure reports its offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint64_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  void expect_magic(std::string_view magic) {
    require(magic.size(), "magic");
    if (data_.substr(pos_, magic.size()) != magic)
      throw FormatError("bad magic, expected '" + std::string(magic) + "'",
                        pos_);
    pos_ += magic.size();
  }

  std::string bytes(std::size_t n, const char* what) {
    require(n, what);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  template <typename T>
  T get(const char* what) {
    require(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8(const char* what) { return get<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return get<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return get<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return get<std::uint64_t>(what); }
  float f32(const char* what) { return get<float>(what); }
  double f64(const char* what) { return get<double>(what); }

  void require(std::uint64_t n, const char* what) const {
    if (data_.size() - pos_ < n)
      throw FormatError(std::string("truncated file while reading ") + what,
                        pos_);
  }

 private:
  std::string_view data_;
  std::uint64_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace msmil
