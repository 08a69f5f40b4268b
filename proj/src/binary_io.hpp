#pragma once

// Little-endian primitives for the binary file formats.

#include "st3d/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace st3d::detail {

template <typename UInt>
void write_le(std::ostream& out, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(UInt));
}

inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }

/// Reader that turns short reads into FormatError naming the file.
class LeReader {
 public:
  LeReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(what_ + ": truncated file");
  }

  template <typename UInt>
  UInt read() {
    unsigned char buf[sizeof(UInt)];
    bytes(reinterpret_cast<char*>(buf), sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(buf[i]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(read<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(read<std::uint32_t>()); }

  /// Bytes left in the stream, for sanity-checking declared sizes.
  std::uint64_t remaining() {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    return here < 0 || end < here ? 0 : static_cast<std::uint64_t>(end - here);
  }

  const std::string& what() const { return what_; }

 private:
  std::istream& in_;
  std::string what_;
};

}  // namespace st3d::detail
