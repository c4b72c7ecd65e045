#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stegosan {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// FNV-1a 64; used for dataset fingerprints and config digests.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) noexcept;
  void update(std::string_view text) noexcept;
  void update_floats(std::span<const float> values) noexcept;
  void update_u64(std::uint64_t v) noexcept;
  std::uint64_t digest() const noexcept { return hash_; }
  std::string hex() const;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

// Little-endian byte buffer helpers shared by the binary formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s);
  std::vector<std::uint8_t>& buffer() noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  std::string bytes(std::size_t n);
  std::string str();
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// Appends the CRC32 of everything already in the buffer.
void seal_with_crc(std::vector<std::uint8_t>& buf);
/// Verifies and strips the trailing CRC32; throws ChecksumError on mismatch.
std::span<const std::uint8_t> open_sealed(std::span<const std::uint8_t> bytes);

}  // namespace stegosan
