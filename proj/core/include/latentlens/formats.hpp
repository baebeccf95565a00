#pragma once

// Binary container formats shared with external extractors.
//
// Every file is   header | payload | trailer
//
//   header   "LLNS" magic, u16 version, u8 kind, u32 dim,
//            u32-length-prefixed UTF-8 model tag, u16 layer count, u16 layer ids
//   payload  kind-specific records (see docs/FORMATS.md)
//   trailer  u64 record count, u32 CRC32 (zlib polynomial) of the payload
//
// All integers and floats are little-endian.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "latentlens/binary_io.hpp"

namespace latentlens::io {

inline constexpr std::array<char, 4> kMagic{'L', 'L', 'N', 'S'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kTrailerBytes = sizeof(std::uint64_t) + sizeof(std::uint32_t);

enum class StreamKind : std::uint8_t {
  kReference = 0,
  kVisualLatent = 1,
  kVocabulary = 2,
  kIndex = 3,
};

struct DumpHeader {
  StreamKind kind = StreamKind::kReference;
  std::uint32_t dim = 0;
  std::string model_tag;
  std::vector<std::uint16_t> layer_ids;
  std::uint16_t version = kFormatVersion;

  bool operator==(const DumpHeader&) const = default;
};

/// One contextual token vector from a corpus phrase.
struct ReferenceEmbeddingRecord {
  std::uint32_t phrase_id = 0;
  std::uint16_t token_index = 0;
  std::uint32_t vocab_token_id = 0;
  std::uint16_t layer_id = 0;
  std::vector<float> vector;

  bool operator==(const ReferenceEmbeddingRecord&) const = default;
};

/// Half-open byte range [begin, end) into a UTF-8 string.
struct ByteSpan {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  std::uint32_t size() const { return end - begin; }
  bool operator==(const ByteSpan&) const = default;
};

inline constexpr std::uint8_t kTokenSpecial = 0x01;

struct TokenSpan {
  ByteSpan bytes;
  std::uint32_t vocab_token_id = 0;
  std::uint8_t flags = 0;

  bool special() const { return (flags & kTokenSpecial) != 0; }
  bool operator==(const TokenSpan&) const = default;
};

/// Phrase-table row carried at the end of a reference stream.
struct PhraseRecord {
  std::uint32_t phrase_id = 0;
  std::string text;
  std::vector<TokenSpan> tokens;

  bool operator==(const PhraseRecord&) const = default;
};

struct VisualLatentRecord {
  std::uint32_t image_id = 0;
  std::uint16_t patch_row = 0;
  std::uint16_t patch_col = 0;
  std::uint16_t layer_id = 0;
  std::vector<float> vector;
  float raw_l2_norm = 0.0f;

  bool operator==(const VisualLatentRecord&) const = default;
};

enum class MatrixRole : std::uint8_t { kEmbedding = 0, kUnembedding = 1 };

/// Dense |V| x dim matrix with one token string per row, row-major.
struct VocabularyMatrix {
  MatrixRole role = MatrixRole::kEmbedding;
  std::uint32_t dim = 0;
  std::string model_tag;
  std::vector<float> values;
  std::vector<std::string> tokens;

  std::size_t rows() const { return tokens.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dim, dim);
  }
};

std::size_t record_bytes(StreamKind kind, std::uint32_t dim);

/// Checks span ordering and bounds against the phrase text.
/// Throws Error(kRejectedRecord) on violation.
void validate_phrase(const PhraseRecord& phrase);

// ---- low-level container primitives (also used by the index file) ----

void write_header(std::ostream& out, const DumpHeader& header);
void write_trailer(std::ostream& out, std::uint64_t record_count, std::uint32_t crc);

struct ContainerInfo {
  DumpHeader header;
  std::streamoff payload_begin = 0;
  std::uint64_t payload_size = 0;
  std::uint64_t record_count = 0;
  std::uint32_t crc = 0;
};

/// Parses the header and trailer of a seekable stream and, if requested,
/// verifies the payload CRC in a constant-memory pass. Leaves the stream
/// positioned at the start of the payload.
ContainerInfo open_container(std::istream& in, bool verify_crc = true);

void write_phrase(PayloadWriter& w, const PhraseRecord& phrase);
PhraseRecord read_phrase(PayloadReader& r);

// ---- record streams ----

/// Append-only writer for reference and visual-latent streams. Phrases for
/// a reference stream are buffered and emitted by finish() after the
/// records, followed by the trailer.
class DumpWriter {
 public:
  DumpWriter(std::ostream& out, DumpHeader header);

  void write(const ReferenceEmbeddingRecord& record);
  void write(const VisualLatentRecord& record);
  void add_phrase(PhraseRecord phrase);
  void finish();

  std::uint64_t record_count() const { return count_; }
  const DumpHeader& header() const { return header_; }

 private:
  void check_layer(std::uint16_t layer) const;

  std::ostream& out_;
  DumpHeader header_;
  PayloadWriter payload_;
  std::vector<PhraseRecord> phrases_;
  std::uint64_t count_ = 0;
  bool finished_ = false;
};

/// Streaming reader. Opening validates magic, version, structure and CRC;
/// records are then decoded one at a time.
class DumpReader {
 public:
  static DumpReader open(const std::filesystem::path& path);

  /// `in` must be seekable and outlive the reader.
  explicit DumpReader(std::istream& in);

  DumpReader(DumpReader&&) noexcept;
  DumpReader& operator=(DumpReader&&) noexcept;
  ~DumpReader();

  const DumpHeader& header() const { return info_.header; }
  std::uint64_t record_count() const { return info_.record_count; }
  std::uint64_t payload_size() const { return info_.payload_size; }

  std::optional<ReferenceEmbeddingRecord> next_reference();
  std::optional<VisualLatentRecord> next_latent();

  /// Reads the phrase section of a reference stream; the record cursor is
  /// left where it was.
  std::vector<PhraseRecord> phrase_table();

  void rewind();

 private:
  std::unique_ptr<std::ifstream> owned_;
  std::istream* in_ = nullptr;
  ContainerInfo info_;
  std::uint64_t next_index_ = 0;
  std::streamoff cursor_ = 0;
};

void write_vocabulary(std::ostream& out, const VocabularyMatrix& matrix);
void write_vocabulary(const std::filesystem::path& path, const VocabularyMatrix& matrix);
VocabularyMatrix read_vocabulary(std::istream& in);
VocabularyMatrix read_vocabulary(const std::filesystem::path& path);

/// Convenience for small streams and tests.
std::vector<VisualLatentRecord> read_all_latents(const std::filesystem::path& path);

}  // namespace latentlens::io
