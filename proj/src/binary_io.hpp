#pragma once

// Little-endian encoding helpers shared by the teacher-feature and checkpoint
// file formats. Readers report the byte offset of any failure.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "glad/error.hpp"

namespace glad::binio {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  const std::string& buffer() const { return buf_; }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return data_.size() - off_; }
  bool done() const { return off_ == data_.size(); }

  std::string_view bytes(std::size_t n) {
    need(n, "bytes");
    auto s = data_.substr(off_, n);
    off_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le<std::uint8_t>("u8")); }
  std::uint16_t u16() { return le<std::uint16_t>("u16"); }
  std::uint32_t u32() { return le<std::uint32_t>("u32"); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>("f32")); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>("f64")); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at offset " + std::to_string(off_));
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated while reading " + field + " at offset " +
                        std::to_string(off_) + " (need " + std::to_string(n) + " bytes, have " +
                        std::to_string(remaining()) + ")");
    }
  }
  template <typename U>
  U le(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(data_[off_ + i])) << (8 * i));
    }
    off_ += sizeof(U);
    return v;
  }

  std::string_view data_;
  std::string what_;
  std::size_t off_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace glad::binio
