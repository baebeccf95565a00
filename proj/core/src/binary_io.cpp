#include "latentlens/binary_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <limits>

#include "latentlens/error.hpp"

namespace latentlens::io {

std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::byte> data) {
  auto c = static_cast<uLong>(crc);
  const auto* p = reinterpret_cast<const Bytef*>(data.data());
  std::size_t n = data.size();
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
    c = ::crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

void PayloadWriter::bytes(std::span<const std::byte> data) {
  out_.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out_) throw Error(ErrorCode::kIo, "write failed");
  crc_ = crc32_update(crc_, data);
  size_ += data.size();
}

void PayloadWriter::put_string(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kRejectedRecord, "string too long");
  }
  put(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void PayloadReader::bytes(void* dst, std::size_t n) {
  if (n > remaining_) throw Error(ErrorCode::kTruncated, "read past end of payload");
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw Error(ErrorCode::kTruncated, "unexpected end of stream");
  }
  remaining_ -= n;
}

std::string PayloadReader::get_string(std::uint32_t max_len) {
  const auto len = get<std::uint32_t>();
  if (len > max_len || len > remaining_) throw Error(ErrorCode::kTruncated, "string length exceeds payload");
  std::string s(len, '\0');
  bytes(s.data(), len);
  return s;
}

}  // namespace latentlens::io
