#pragma once

#include <span>
#include <string>
#include <string_view>

#include "latentlens/formats.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/phrase_table.hpp"

namespace latentlens::lens {

struct MergedWord {
  std::string word;
  io::ByteSpan span;

  bool operator==(const MergedWord&) const = default;
};

/// ASCII whitespace or ASCII punctuation. Bytes >= 0x80 are word bytes.
bool is_word_separator(unsigned char c);

/// Grows the matched token outward across adjacent token spans until a
/// separator byte, a gap between spans, or the phrase edge. "b|elf|ry" with
/// the match on "elf" yields "belfry". Throws kCorruptIndex for spans
/// outside the text.
MergedWord merge_to_full_word(std::string_view text, std::span<const io::TokenSpan> tokens,
                              std::size_t token_index);

/// Latent-lens matches only; throws kRejectedInput for other matches.
MergedWord merge_to_full_word(const Match& match, const corpus::PhraseTable& table);

}  // namespace latentlens::lens
