#pragma once

// Little-endian byte packing shared by the SNPT, PODB and checkpoint formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "romforge/error.hpp"

namespace romforge::io {

class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

  void u8(std::uint8_t v) { bytes_.push_back(v); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

  void f64s(std::span<const double> values) {
    bytes_.reserve(bytes_.size() + 8 * values.size());
    for (double v : values) f64(v);
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw WriteError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes_.data()),
              static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw WriteError("write to '" + path.string() + "' failed");
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked cursor over a byte buffer. Running past the end throws
/// CorruptionError naming the source.
class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
  }

  bool magic(std::string_view tag) {
    need(tag.size());
    bool ok = std::equal(tag.begin(), tag.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                         [](char c, std::uint8_t b) { return static_cast<std::uint8_t>(c) == b; });
    pos_ += tag.size();
    return ok;
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(bits);
  }

  void f64s(std::span<double> out) {
    need(8 * out.size());
    for (double& v : out) v = f64();
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw CorruptionError("'" + source_ + "' is truncated: needed " + std::to_string(n) +
                            " more bytes at offset " + std::to_string(pos_));
  }

  std::vector<std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

/// 16 lowercase hex digits of the little-endian byte sequence of `v`.
inline std::string hex_f64(double v) {
  static constexpr char digits[] = "0123456789abcdef";
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::string out(16, '0');
  for (int i = 0; i < 8; ++i) {
    const auto byte = static_cast<std::uint8_t>(bits >> (8 * i));
    out[2 * i] = digits[byte >> 4];
    out[2 * i + 1] = digits[byte & 0xF];
  }
  return out;
}

inline double unhex_f64(std::string_view s) {
  if (s.size() != 16) throw FormatError("hex double must have 16 digits, got '" + std::string(s) + "'");
  auto nibble = [&](char c) -> std::uint64_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint64_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint64_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<std::uint64_t>(c - 'A' + 10);
    throw FormatError("bad hex digit in '" + std::string(s) + "'");
  };
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    const std::uint64_t byte = (nibble(s[2 * i]) << 4) | nibble(s[2 * i + 1]);
    bits |= byte << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace romforge::io
