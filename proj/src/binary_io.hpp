#pragma once

// Little-endian readers and writers shared by the dataset, checkpoint and
// code file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmh/errors.hpp"

namespace xmh::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  void magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(std::span<const double> values) { raw(values.data(), values.size_bytes()); }

  void write_to(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError("write failed for " + path.string());
  }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  static Reader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(data), path.string());
  }

  Reader(std::vector<std::uint8_t> data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
      throw FormatError(name_ + ": bad magic, expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }
  std::uint32_t u32(const char* field) {
    std::uint32_t v;
    raw(&v, sizeof v, field);
    return v;
  }
  double f64(const char* field) {
    double v;
    raw(&v, sizeof v, field);
    return v;
  }
  void f64s(std::span<double> out, const char* field) { raw(out.data(), out.size_bytes(), field); }
  void bytes(std::span<std::uint8_t> out, const char* field) { raw(out.data(), out.size(), field); }

  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(name_ + ": " + std::to_string(remaining()) + " trailing bytes after payload");
    }
  }
  [[noreturn]] void fail(const std::string& message) const { throw FormatError(name_ + ": " + message); }

 private:
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) fail(std::string("truncated while reading ") + field);
  }
  void raw(void* dst, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::vector<std::uint8_t> data_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace xmh::io
