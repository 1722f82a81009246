#pragma once

// Little-endian encode/decode independent of host byte order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace jam::detail {

template <typename UInt>
void put_le(std::vector<char>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename UInt>
UInt get_le(const char* p) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    v |= static_cast<UInt>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f64(std::vector<char>& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x)); }
inline void put_f32(std::vector<char>& out, float x) { put_le(out, std::bit_cast<std::uint32_t>(x)); }
inline double get_f64(const char* p) { return std::bit_cast<double>(get_le<std::uint64_t>(p)); }
inline float get_f32(const char* p) { return std::bit_cast<float>(get_le<std::uint32_t>(p)); }

/// Bounds-checked cursor over a byte buffer.
class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  bool has(std::size_t n) const { return size_ - pos_ >= n; }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

  const char* take(std::size_t n) {
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace jam::detail
