#include "latentlens/formats.hpp"

#include <algorithm>
#include <cmath>

#include "latentlens/error.hpp"
#include "latentlens/vector_ops.hpp"

namespace latentlens::io {
namespace {

constexpr std::uint64_t kUnbounded = ~std::uint64_t{0};
constexpr double kNormTolerance = 1e-4;

void check_header(const DumpHeader& h) {
  if (h.dim == 0) throw Error(ErrorCode::kCorruptInput, "header dim must be >= 1");
  for (std::size_t i = 1; i < h.layer_ids.size(); ++i) {
    if (h.layer_ids[i] <= h.layer_ids[i - 1]) {
      throw Error(ErrorCode::kCorruptInput, "header layer ids must be strictly increasing");
    }
  }
  if (h.layer_ids.size() > 0xFFFF) throw Error(ErrorCode::kCorruptInput, "too many layers");
}

void check_latent_norm(const VisualLatentRecord& r) {
  const double actual = l2_norm(r.vector);
  const double diff = std::fabs(actual - static_cast<double>(r.raw_l2_norm));
  if (diff > kNormTolerance * std::max(actual, 1e-30) && diff > 0.0) {
    throw Error(ErrorCode::kRejectedRecord,
                "raw_l2_norm " + std::to_string(r.raw_l2_norm) + " differs from vector norm " +
                    std::to_string(actual));
  }
}

}  // namespace

std::size_t record_bytes(StreamKind kind, std::uint32_t dim) {
  switch (kind) {
    case StreamKind::kReference: return 4 + 2 + 4 + 2 + 4 * std::size_t{dim};
    case StreamKind::kVisualLatent: return 4 + 2 + 2 + 2 + 4 * std::size_t{dim} + 4;
    default: return 0;
  }
}

void validate_phrase(const PhraseRecord& phrase) {
  std::uint32_t prev_end = 0;
  for (std::size_t i = 0; i < phrase.tokens.size(); ++i) {
    const ByteSpan& s = phrase.tokens[i].bytes;
    if (s.begin > s.end || s.end > phrase.text.size() || s.begin < prev_end) {
      throw Error(ErrorCode::kRejectedRecord, "phrase " + std::to_string(phrase.phrase_id) +
                                                  ": token span " + std::to_string(i) +
                                                  " is out of order or out of bounds");
    }
    prev_end = s.end;
  }
  if (phrase.tokens.size() > 0xFFFF) {
    throw Error(ErrorCode::kRejectedRecord, "phrase has more than 65535 tokens");
  }
}

void write_header(std::ostream& out, const DumpHeader& header) {
  check_header(header);
  PayloadWriter w(out);
  w.bytes(kMagic.data(), kMagic.size());
  w.put(header.version);
  w.put(static_cast<std::uint8_t>(header.kind));
  w.put(header.dim);
  w.put_string(header.model_tag);
  w.put(static_cast<std::uint16_t>(header.layer_ids.size()));
  w.put_array(std::span<const std::uint16_t>(header.layer_ids));
}

void write_trailer(std::ostream& out, std::uint64_t record_count, std::uint32_t crc) {
  PayloadWriter w(out);
  w.put(record_count);
  w.put(crc);
}

namespace {

DumpHeader read_header(std::istream& in) {
  PayloadReader r(in, kUnbounded);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw Error(ErrorCode::kBadMagic, "not an LLNS container");
  DumpHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "format version " + std::to_string(h.version));
  }
  const auto kind = r.get<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(StreamKind::kIndex)) {
    throw Error(ErrorCode::kCorruptInput, "unknown stream kind " + std::to_string(kind));
  }
  h.kind = static_cast<StreamKind>(kind);
  h.dim = r.get<std::uint32_t>();
  h.model_tag = r.get_string(1u << 20);
  h.layer_ids.resize(r.get<std::uint16_t>());
  r.get_array(std::span<std::uint16_t>(h.layer_ids));
  check_header(h);
  return h;
}

}  // namespace

ContainerInfo open_container(std::istream& in, bool verify_crc) {
  ContainerInfo info;
  in.clear();
  in.seekg(0, std::ios::beg);
  info.header = read_header(in);
  info.payload_begin = in.tellg();
  in.seekg(0, std::ios::end);
  const std::streamoff total = in.tellg();
  if (total < info.payload_begin + static_cast<std::streamoff>(kTrailerBytes)) {
    throw Error(ErrorCode::kTruncated, "file ends before trailer");
  }
  info.payload_size = static_cast<std::uint64_t>(total - info.payload_begin) - kTrailerBytes;
  in.seekg(info.payload_begin + static_cast<std::streamoff>(info.payload_size));
  PayloadReader tr(in, kTrailerBytes);
  info.record_count = tr.get<std::uint64_t>();
  info.crc = tr.get<std::uint32_t>();

  const std::size_t rs = record_bytes(info.header.kind, info.header.dim);
  const std::uint64_t n = info.record_count;
  switch (info.header.kind) {
    case StreamKind::kVisualLatent:
      if (n > info.payload_size / rs || n * rs != info.payload_size) {
        throw Error(ErrorCode::kTruncated, "payload length disagrees with record count");
      }
      break;
    case StreamKind::kReference:
      if (n > info.payload_size / rs || n * rs + 4 > info.payload_size) {
        throw Error(ErrorCode::kTruncated, "payload shorter than record count implies");
      }
      break;
    case StreamKind::kVocabulary: {
      const std::uint64_t min_row = 4 + 4 * std::uint64_t{info.header.dim};
      if (info.payload_size < 1 || n > (info.payload_size - 1) / min_row) {
        throw Error(ErrorCode::kTruncated, "payload shorter than row count implies");
      }
      break;
    }
    case StreamKind::kIndex:
      // Every entry carries at least its dim code bytes; a trailer read
      // from the wrong offset of a cut file almost never satisfies this.
      if (n > info.payload_size / info.header.dim) {
        throw Error(ErrorCode::kTruncated, "payload shorter than entry count implies");
      }
      break;
  }

  if (verify_crc) {
    in.seekg(info.payload_begin);
    std::vector<char> buf(1 << 20);
    std::uint64_t left = info.payload_size;
    std::uint32_t crc = 0;
    while (left > 0) {
      const auto chunk = static_cast<std::size_t>(std::min<std::uint64_t>(left, buf.size()));
      in.read(buf.data(), static_cast<std::streamsize>(chunk));
      if (static_cast<std::size_t>(in.gcount()) != chunk) {
        throw Error(ErrorCode::kTruncated, "unexpected end of payload");
      }
      crc = crc32_update(crc, std::as_bytes(std::span<const char>(buf.data(), chunk)));
      left -= chunk;
    }
    if (crc != info.crc) throw Error(ErrorCode::kCrcMismatch, "payload checksum mismatch");
  }
  in.clear();
  in.seekg(info.payload_begin);
  return info;
}

void write_phrase(PayloadWriter& w, const PhraseRecord& phrase) {
  w.put(phrase.phrase_id);
  w.put_string(phrase.text);
  w.put(static_cast<std::uint16_t>(phrase.tokens.size()));
  for (const TokenSpan& t : phrase.tokens) {
    w.put(t.bytes.begin);
    w.put(t.bytes.end);
    w.put(t.vocab_token_id);
    w.put(t.flags);
  }
}

PhraseRecord read_phrase(PayloadReader& r) {
  PhraseRecord p;
  p.phrase_id = r.get<std::uint32_t>();
  p.text = r.get_string();
  p.tokens.resize(r.get<std::uint16_t>());
  for (TokenSpan& t : p.tokens) {
    t.bytes.begin = r.get<std::uint32_t>();
    t.bytes.end = r.get<std::uint32_t>();
    t.vocab_token_id = r.get<std::uint32_t>();
    t.flags = r.get<std::uint8_t>();
  }
  validate_phrase(p);
  return p;
}

// ---- DumpWriter ----

DumpWriter::DumpWriter(std::ostream& out, DumpHeader header)
    : out_(out), header_(std::move(header)), payload_(out) {
  if (header_.kind != StreamKind::kReference && header_.kind != StreamKind::kVisualLatent) {
    throw Error(ErrorCode::kRejectedInput, "DumpWriter handles reference and latent streams only");
  }
  write_header(out_, header_);
}

void DumpWriter::check_layer(std::uint16_t layer) const {
  if (!std::binary_search(header_.layer_ids.begin(), header_.layer_ids.end(), layer)) {
    throw Error(ErrorCode::kRejectedRecord, "layer " + std::to_string(layer) + " not declared in header");
  }
}

void DumpWriter::write(const ReferenceEmbeddingRecord& r) {
  if (finished_) throw Error(ErrorCode::kRejectedInput, "stream already finished");
  if (header_.kind != StreamKind::kReference) {
    throw Error(ErrorCode::kRejectedRecord, "reference record written to non-reference stream");
  }
  if (r.vector.size() != header_.dim) {
    throw Error(ErrorCode::kRejectedRecord, "record dim " + std::to_string(r.vector.size()) +
                                                " != header dim " + std::to_string(header_.dim));
  }
  check_layer(r.layer_id);
  payload_.put(r.phrase_id);
  payload_.put(r.token_index);
  payload_.put(r.vocab_token_id);
  payload_.put(r.layer_id);
  payload_.put_array(std::span<const float>(r.vector));
  ++count_;
}

void DumpWriter::write(const VisualLatentRecord& r) {
  if (finished_) throw Error(ErrorCode::kRejectedInput, "stream already finished");
  if (header_.kind != StreamKind::kVisualLatent) {
    throw Error(ErrorCode::kRejectedRecord, "latent record written to non-latent stream");
  }
  if (r.vector.size() != header_.dim) {
    throw Error(ErrorCode::kRejectedRecord, "record dim " + std::to_string(r.vector.size()) +
                                                " != header dim " + std::to_string(header_.dim));
  }
  check_layer(r.layer_id);
  check_latent_norm(r);
  payload_.put(r.image_id);
  payload_.put(r.patch_row);
  payload_.put(r.patch_col);
  payload_.put(r.layer_id);
  payload_.put_array(std::span<const float>(r.vector));
  payload_.put(r.raw_l2_norm);
  ++count_;
}

void DumpWriter::add_phrase(PhraseRecord phrase) {
  if (header_.kind != StreamKind::kReference) {
    throw Error(ErrorCode::kRejectedRecord, "phrase table belongs to reference streams");
  }
  validate_phrase(phrase);
  phrases_.push_back(std::move(phrase));
}

void DumpWriter::finish() {
  if (finished_) return;
  if (header_.kind == StreamKind::kReference) {
    payload_.put(static_cast<std::uint32_t>(phrases_.size()));
    for (const PhraseRecord& p : phrases_) write_phrase(payload_, p);
  }
  write_trailer(out_, count_, payload_.crc());
  out_.flush();
  finished_ = true;
}

// ---- DumpReader ----

DumpReader DumpReader::open(const std::filesystem::path& path) {
  auto file = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*file) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  DumpReader reader(*file);
  reader.owned_ = std::move(file);
  return reader;
}

DumpReader::DumpReader(std::istream& in) : in_(&in), info_(open_container(in, true)) {
  if (info_.header.kind != StreamKind::kReference && info_.header.kind != StreamKind::kVisualLatent) {
    throw Error(ErrorCode::kRejectedInput, "not a record stream");
  }
  cursor_ = info_.payload_begin;
}

DumpReader::DumpReader(DumpReader&&) noexcept = default;
DumpReader& DumpReader::operator=(DumpReader&&) noexcept = default;
DumpReader::~DumpReader() = default;

void DumpReader::rewind() {
  next_index_ = 0;
  cursor_ = info_.payload_begin;
  in_->clear();
  in_->seekg(cursor_);
}

std::optional<ReferenceEmbeddingRecord> DumpReader::next_reference() {
  if (info_.header.kind != StreamKind::kReference) {
    throw Error(ErrorCode::kRejectedInput, "stream does not hold reference records");
  }
  if (next_index_ >= info_.record_count) return std::nullopt;
  const std::size_t rs = record_bytes(info_.header.kind, info_.header.dim);
  PayloadReader r(*in_, rs);
  ReferenceEmbeddingRecord rec;
  rec.phrase_id = r.get<std::uint32_t>();
  rec.token_index = r.get<std::uint16_t>();
  rec.vocab_token_id = r.get<std::uint32_t>();
  rec.layer_id = r.get<std::uint16_t>();
  rec.vector.resize(info_.header.dim);
  r.get_array(std::span<float>(rec.vector));
  ++next_index_;
  cursor_ += static_cast<std::streamoff>(rs);
  return rec;
}

std::optional<VisualLatentRecord> DumpReader::next_latent() {
  if (info_.header.kind != StreamKind::kVisualLatent) {
    throw Error(ErrorCode::kRejectedInput, "stream does not hold latent records");
  }
  if (next_index_ >= info_.record_count) return std::nullopt;
  const std::size_t rs = record_bytes(info_.header.kind, info_.header.dim);
  PayloadReader r(*in_, rs);
  VisualLatentRecord rec;
  rec.image_id = r.get<std::uint32_t>();
  rec.patch_row = r.get<std::uint16_t>();
  rec.patch_col = r.get<std::uint16_t>();
  rec.layer_id = r.get<std::uint16_t>();
  rec.vector.resize(info_.header.dim);
  r.get_array(std::span<float>(rec.vector));
  rec.raw_l2_norm = r.get<float>();
  check_latent_norm(rec);
  ++next_index_;
  cursor_ += static_cast<std::streamoff>(rs);
  return rec;
}

std::vector<PhraseRecord> DumpReader::phrase_table() {
  if (info_.header.kind != StreamKind::kReference) return {};
  const std::uint64_t records = info_.record_count * record_bytes(info_.header.kind, info_.header.dim);
  in_->clear();
  in_->seekg(info_.payload_begin + static_cast<std::streamoff>(records));
  PayloadReader r(*in_, info_.payload_size - records);
  const auto n = r.get<std::uint32_t>();
  if (n > r.remaining() / 11) throw Error(ErrorCode::kTruncated, "phrase count exceeds payload");
  std::vector<PhraseRecord> phrases;
  phrases.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) phrases.push_back(read_phrase(r));
  if (r.remaining() != 0) throw Error(ErrorCode::kCorruptInput, "trailing bytes after phrase table");
  in_->clear();
  in_->seekg(cursor_);
  return phrases;
}

// ---- vocabulary ----

void write_vocabulary(std::ostream& out, const VocabularyMatrix& m) {
  if (m.values.size() != m.rows() * std::size_t{m.dim}) {
    throw Error(ErrorCode::kRejectedRecord, "row count differs from token-string count");
  }
  DumpHeader h{StreamKind::kVocabulary, m.dim, m.model_tag, {}};
  write_header(out, h);
  PayloadWriter w(out);
  w.put(static_cast<std::uint8_t>(m.role));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    w.put_string(m.tokens[i]);
    w.put_array(m.row(i));
  }
  write_trailer(out, m.rows(), w.crc());
  out.flush();
}

void write_vocabulary(const std::filesystem::path& path, const VocabularyMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  write_vocabulary(out, m);
}

VocabularyMatrix read_vocabulary(std::istream& in) {
  const ContainerInfo info = open_container(in, true);
  if (info.header.kind != StreamKind::kVocabulary) {
    throw Error(ErrorCode::kRejectedInput, "not a vocabulary stream");
  }
  PayloadReader r(in, info.payload_size);
  VocabularyMatrix m;
  m.dim = info.header.dim;
  m.model_tag = info.header.model_tag;
  const auto role = r.get<std::uint8_t>();
  if (role > 1) throw Error(ErrorCode::kCorruptInput, "unknown matrix role");
  m.role = static_cast<MatrixRole>(role);
  m.tokens.reserve(info.record_count);
  m.values.resize(info.record_count * m.dim);
  for (std::uint64_t i = 0; i < info.record_count; ++i) {
    m.tokens.push_back(r.get_string());
    r.get_array(std::span<float>(m.values).subspan(i * m.dim, m.dim));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kCorruptInput, "trailing bytes after vocabulary rows");
  return m;
}

VocabularyMatrix read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_vocabulary(in);
}

std::vector<VisualLatentRecord> read_all_latents(const std::filesystem::path& path) {
  DumpReader reader = DumpReader::open(path);
  std::vector<VisualLatentRecord> out;
  out.reserve(reader.record_count());
  while (auto rec = reader.next_latent()) out.push_back(std::move(*rec));
  return out;
}

}  // namespace latentlens::io
