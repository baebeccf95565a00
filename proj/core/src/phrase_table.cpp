#include "latentlens/phrase_table.hpp"

#include "latentlens/error.hpp"

namespace latentlens::corpus {

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  while (i < s.size()) {
    const unsigned char c = byte(i);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((byte(i + k) & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (byte(i + k) & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if (cp >= 0xD800 && cp <= 0xDFFF) return false;
    if (cp > 0x10FFFF) return false;
    i += len;
  }
  return true;
}

PhraseTable::Added PhraseTable::add(std::string text, std::vector<io::TokenSpan> tokens) {
  if (!is_valid_utf8(text)) throw Error(ErrorCode::kRejectedRecord, "phrase is not valid UTF-8");
  if (auto it = by_text_.find(text); it != by_text_.end()) return {it->second, false};
  io::PhraseRecord check{0, text, tokens};
  io::validate_phrase(check);
  const auto id = static_cast<std::uint32_t>(phrases_.size());
  by_text_.emplace(text, id);
  phrases_.push_back(Phrase{std::move(text), std::move(tokens)});
  return {id, true};
}

std::optional<std::uint32_t> PhraseTable::find(std::string_view text) const {
  if (auto it = by_text_.find(std::string(text)); it != by_text_.end()) return it->second;
  return std::nullopt;
}

const Phrase& PhraseTable::at(std::uint32_t id) const {
  if (id >= phrases_.size()) {
    throw Error(ErrorCode::kCorruptIndex, "phrase id " + std::to_string(id) + " not in table");
  }
  return phrases_[id];
}

PhraseTable ingest_phrases(std::span<const std::string> raw) {
  PhraseTable table;
  for (const std::string& s : raw) table.add(s);
  return table;
}

}  // namespace latentlens::corpus
