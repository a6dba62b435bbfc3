#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "volflow/common.hpp"

namespace volflow {

static_assert(std::endian::native == std::endian::little,
              "binary file formats are little-endian; byte swapping is not implemented");

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw_io("cannot open '" + path + "' for writing");
  }

  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw_io("write failed on '" + path_ + "'");
  }
  void magic(const char m[4]) { bytes(m, 4); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i64(int64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f32_array(const std::vector<float>& v) { bytes(v.data(), v.size() * 4); }
  void f64_array(const std::vector<double>& v) { bytes(v.data(), v.size() * 8); }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw_io("cannot open '" + path + "' for reading");
  }

  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw_data("truncated file '" + path_ + "'");
  }
  void expect_magic(const char m[4]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw_data("bad magic in '" + path_ + "' (expected " + std::string(m, 4) + ")");
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, 8);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    uint64_t n = u64();
    if (n > (1ULL << 32)) throw_data("implausible string length in '" + path_ + "'");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void f32_array(std::vector<float>& v, size_t n) {
    v.resize(n);
    bytes(v.data(), n * 4);
  }
  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace volflow
