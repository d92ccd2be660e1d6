#pragma once

// Byte-level helpers for the on-disk formats. Readers track the offset so
// that format errors can say where a file went wrong.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "e2em/errors.hpp"

namespace e2em::io {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16_le(std::uint16_t v) { little(v, 2); }
  void u32_le(std::uint32_t v) { little(v, 4); }
  void u32_be(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32_le(float f) { u32_le(std::bit_cast<std::uint32_t>(f)); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  void little(std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  /// Throws unless `n` more bytes are available.
  void need(std::size_t n, std::string_view field) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated at offset " + std::to_string(pos_) + " reading " + std::string(field) +
                        ": expected " + std::to_string(pos_ + n) + " bytes, file has " + std::to_string(data_.size()));
    }
  }
  std::string bytes(std::size_t n, std::string_view field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(std::string_view field) {
    need(1, field);
    return data_[pos_++];
  }
  std::uint16_t u16_le(std::string_view field) { return static_cast<std::uint16_t>(little(2, field)); }
  std::uint32_t u32_le(std::string_view field) { return little(4, field); }
  std::uint32_t u32_be(std::string_view field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  float f32_le(std::string_view field) { return std::bit_cast<float>(u32_le(field)); }

  [[noreturn]] void fail(const std::string& message, std::size_t at) const {
    throw FormatError(what_ + ": " + message + " at offset " + std::to_string(at));
  }
  const std::string& what() const { return what_; }

 private:
  std::uint32_t little(int n, std::string_view field) {
    need(static_cast<std::size_t>(n), field);
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  const std::vector<std::uint8_t>& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace e2em::io
