#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

namespace latentlens::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::byte> data);

/// Little-endian sink that tracks the CRC32 and length of everything written
/// through it.
class PayloadWriter {
 public:
  explicit PayloadWriter(std::ostream& out) : out_(out) {}

  void bytes(std::span<const std::byte> data);
  void bytes(const void* data, std::size_t n) {
    bytes(std::span<const std::byte>(static_cast<const std::byte*>(data), n));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    value = byteswap_if_big(value);
    bytes(&value, sizeof(T));
  }

  /// Arrays of arithmetic values, element-wise little-endian.
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (T v : values) put(v);
    }
  }

  /// u32 length prefix followed by the raw bytes.
  void put_string(std::string_view s);

  std::uint32_t crc() const { return crc_; }
  std::uint64_t size() const { return size_; }

 private:
  std::ostream& out_;
  std::uint32_t crc_ = 0;
  std::uint64_t size_ = 0;
};

/// Bounded little-endian source over a payload region. Every read past the
/// bound throws Error(kTruncated).
class PayloadReader {
 public:
  PayloadReader(std::istream& in, std::uint64_t limit) : in_(in), remaining_(limit) {}

  void bytes(void* dst, std::size_t n);

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value;
    bytes(&value, sizeof(T));
    return byteswap_if_big(value);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(std::span<T> out) {
    bytes(out.data(), out.size_bytes());
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
      for (T& v : out) v = byteswap_if_big(v);
    }
  }

  std::string get_string(std::uint32_t max_len = 1u << 28);

  std::uint64_t remaining() const { return remaining_; }

 private:
  std::istream& in_;
  std::uint64_t remaining_;
};

}  // namespace latentlens::io
