#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mvfuse/common.hpp"

namespace mvf {

/// Little-endian binary writer over a buffered file stream. All on-disk
/// formats in this project are little-endian; the host is assumed to match
/// (checked nowhere hot: IEEE-754 and LE are the only supported targets).
class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    MVF_CHECK(out_.good(), Errc::io_error, "cannot open for writing: " + path);
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void i32(std::int32_t v) { bytes(&v, sizeof v); }
  void i64(std::int64_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    out_.close();
    MVF_CHECK(out_.good(), Errc::io_error, "write failure: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    MVF_CHECK(in_.good(), Errc::io_error, "cannot open for reading: " + path);
  }

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    MVF_CHECK(in_.gcount() == static_cast<std::streamsize>(n), Errc::data_truncated,
              "file ends mid-record: " + path_);
  }

  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, sizeof v);
    return v;
  }

  std::string str(std::size_t max_len = 1 << 20) {
    const std::uint32_t n = u32();
    MVF_CHECK(n <= max_len, Errc::data_format, "unreasonable string length in " + path_);
    std::string s(n, '\0');
    if (n > 0) bytes(s.data(), n);
    return s;
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace mvf
