#include "latentlens/word_merge.hpp"

#include "latentlens/error.hpp"

namespace latentlens::lens {

bool is_word_separator(unsigned char c) {
  if (c >= 0x80) return false;
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' ||
         (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

MergedWord merge_to_full_word(std::string_view text, std::span<const io::TokenSpan> tokens,
                              std::size_t token_index) {
  if (token_index >= tokens.size()) throw Error(ErrorCode::kCorruptIndex, "token index outside phrase");
  for (const io::TokenSpan& t : tokens) {
    if (t.bytes.begin > t.bytes.end || t.bytes.end > text.size()) {
      throw Error(ErrorCode::kCorruptIndex, "token span outside phrase text");
    }
  }
  const auto sep = [&](std::size_t i) { return is_word_separator(static_cast<unsigned char>(text[i])); };

  const io::ByteSpan tok = tokens[token_index].bytes;
  std::size_t begin = tok.begin;
  std::size_t end = tok.end;
  while (begin < end && sep(begin)) ++begin;
  while (end > begin && sep(end - 1)) --end;
  if (begin == end) {
    return {std::string(text.substr(tok.begin, tok.size())), tok};
  }

  // Leftwards: only when the content reaches the token's left edge.
  if (begin == tok.begin) {
    std::size_t cur = token_index;
    while (cur > 0) {
      const io::ByteSpan prev = tokens[cur - 1].bytes;
      if (prev.end != tokens[cur].bytes.begin) break;
      std::size_t p = prev.end;
      while (p > prev.begin && !sep(p - 1)) --p;
      begin = p;
      if (p > prev.begin) break;
      --cur;
    }
  }
  if (end == tok.end) {
    std::size_t cur = token_index;
    while (cur + 1 < tokens.size()) {
      const io::ByteSpan next = tokens[cur + 1].bytes;
      if (next.begin != tokens[cur].bytes.end) break;
      std::size_t p = next.begin;
      while (p < next.end && !sep(p)) ++p;
      end = p;
      if (p < next.end) break;
      ++cur;
    }
  }
  return {std::string(text.substr(begin, end - begin)),
          io::ByteSpan{static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)}};
}

MergedWord merge_to_full_word(const Match& match, const corpus::PhraseTable& table) {
  if (!match.phrase_id) throw Error(ErrorCode::kRejectedInput, "merge needs a latent-lens match");
  const corpus::Phrase& phrase = table.at(*match.phrase_id);
  if (match.matched_span && match.token_index < phrase.tokens.size() &&
      !(phrase.tokens[match.token_index].bytes == *match.matched_span)) {
    throw Error(ErrorCode::kCorruptIndex, "match span disagrees with phrase table");
  }
  return merge_to_full_word(phrase.text, phrase.tokens, match.token_index);
}

}  // namespace latentlens::lens
