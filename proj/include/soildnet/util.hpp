#pragma once

#include <cstdarg>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace soildnet {

// printf-style std::string builder, used for error messages and report rows.
std::string strf(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

// SplitMix64 step; also used to derive independent per-sample RNG streams
// as hash(seed, index).
uint64_t splitmix64(uint64_t& state);
uint64_t hash_seed(uint64_t seed, uint64_t index);

// Deterministic RNG wrapper. std::mt19937_64 is fully specified by the
// standard; the distributions here are hand-rolled so a given seed yields
// the same stream on every build.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n >= 1.
  uint64_t below(uint64_t n);
  int range(int lo, int hi);  // inclusive bounds
  // Standard normal via Box-Muller (cached spare).
  double gauss();
  double gauss(double mean, double stddev) { return mean + stddev * gauss(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own bounded sampling, not std::shuffle, so the
    // permutation is identical on every platform.
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

uint64_t fnv1a64(const void* data, size_t len);

// --- little-endian binary serialization helpers ---

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void i8(int8_t v) { buf_.push_back(static_cast<uint8_t>(v)); }
  void u16(uint16_t v);
  void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
  void u32(uint32_t v);
  void u64(uint64_t v);
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f64(double v);
  void bytes(const void* data, size_t len);
  void str(const std::string& s);  // u32 length + raw bytes

  const std::vector<uint8_t>& data() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : p_(data), end_(data + len) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

  uint8_t u8();
  int8_t i8() { return static_cast<int8_t>(u8()); }
  uint16_t u16();
  int16_t i16() { return static_cast<int16_t>(u16()); }
  uint32_t u32();
  uint64_t u64();
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64();
  void bytes(void* out, size_t len);
  std::string str();
  bool at_end() const { return p_ == end_; }

 private:
  void need(size_t n);
  const uint8_t* p_;
  const uint8_t* end_;
};

// --- file helpers ---

std::vector<uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, size_t len);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace soildnet
