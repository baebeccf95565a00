#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "latentlens/formats.hpp"

namespace latentlens::corpus {

struct Phrase {
  std::string text;
  std::vector<io::TokenSpan> tokens;

  bool operator==(const Phrase&) const = default;
};

/// Deduplicated phrase store. Ids are dense from 0 in first-seen order;
/// dedup is on the exact byte string (no case folding or normalization).
class PhraseTable {
 public:
  struct Added {
    std::uint32_t id;
    bool inserted;
  };

  /// Throws Error(kRejectedRecord) for invalid UTF-8 or bad token spans.
  Added add(std::string text, std::vector<io::TokenSpan> tokens = {});

  std::optional<std::uint32_t> find(std::string_view text) const;

  /// Throws Error(kCorruptIndex) for an unknown id.
  const Phrase& at(std::uint32_t id) const;

  std::size_t size() const { return phrases_.size(); }
  bool empty() const { return phrases_.empty(); }
  const std::vector<Phrase>& phrases() const { return phrases_; }

  bool operator==(const PhraseTable& other) const { return phrases_ == other.phrases_; }

 private:
  std::vector<Phrase> phrases_;
  std::unordered_map<std::string, std::uint32_t> by_text_;
};

bool is_valid_utf8(std::string_view s);

PhraseTable ingest_phrases(std::span<const std::string> raw);

}  // namespace latentlens::corpus
