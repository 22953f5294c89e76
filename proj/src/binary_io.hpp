#pragma once

// Little-endian primitives shared by the GCK1 and SEB1 readers/writers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "selab/error.hpp"

namespace selab::binary {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_f32(std::string& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

// Sequential reader over an in-memory file image. Every read checks bounds
// and reports what was expected versus what remains.
class Reader {
 public:
  Reader(std::string_view bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated reading " + field + ": expected " +
                        std::to_string(pos_ + n) + " bytes, file has " +
                        std::to_string(bytes_.size()));
    }
  }

  std::string_view bytes(std::size_t n, const char* field) {
    need(n, field);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  std::uint16_t u16(const char* field) {
    need(2, field);
    auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes_[pos_]) |
                                         (static_cast<unsigned char>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }

  void skip(std::size_t n, const char* field) {
    need(n, field);
    pos_ += n;
  }

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  void f32_array(float* dst, std::size_t count, const char* field) {
    need(count * 4, field);
    for (std::size_t k = 0; k < count; ++k) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
      dst[k] = std::bit_cast<float>(v);
      pos_ += 4;
    }
  }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace selab::binary
