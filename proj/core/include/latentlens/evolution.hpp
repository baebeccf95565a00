#pragma once

// Evolutionary search for phrase contexts whose target-token embedding is
// close to a visual latent. Only the words before the target change.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentlens/formats.hpp"
#include "latentlens/judge.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/phrase_table.hpp"

namespace latentlens::evolution {

struct EvolutionConfig {
  std::uint32_t rounds = 6;
  std::uint32_t variations_per_round = 20;
  std::uint32_t keep = 5;
  std::uint64_t seed = 0;
  /// Lets variants end in a different target word. Off by default.
  bool allow_target_substitution = false;

  /// Throws kConfiguration unless every count is >= 1.
  void validate() const;
};

/// Parses "rounds=6,variations=20,keep=5[,seed=N]" over `base`.
EvolutionConfig parse_config(std::string_view spec, EvolutionConfig base = {});

struct CandidatePhrase {
  std::uint32_t id = 0;
  std::string text;
  std::string target_token;
  io::ByteSpan target_span;
  float score = 0.0f;
  std::optional<std::uint32_t> parent;
  std::uint32_t round = 0;  // 0 for seeds
};

/// Span of `target` when it is the last word of `text`, allowing trailing
/// whitespace and punctuation and requiring a word boundary before it.
std::optional<io::ByteSpan> target_at_end(std::string_view text, std::string_view target);

/// Last word of `text` ignoring trailing separators, or nullopt if none.
std::optional<io::ByteSpan> last_word(std::string_view text);

class PhraseGenerator {
 public:
  virtual ~PhraseGenerator() = default;
  /// Up to `n` variants of `parent.text` that change only the prefix.
  virtual std::vector<std::string> generate(const CandidatePhrase& parent, std::size_t n, std::uint64_t seed) = 0;
};

class PhraseEmbedder {
 public:
  virtual ~PhraseEmbedder() = default;
  /// Contextual vector of the target token inside `text` at `layer`.
  /// Throwing drops the variant.
  virtual std::vector<float> embed(std::string_view text, io::ByteSpan target_span, std::uint16_t layer) = 0;
};

/// Truncates the matched phrase after the merged full word so that word
/// becomes the target at the end.
CandidatePhrase seed_from_match(const lens::Match& match, const corpus::PhraseTable& table);

enum class RejectionKind { kConstraint, kInvalidText, kEmbedFailure };

struct Rejection {
  RejectionKind kind = RejectionKind::kConstraint;
  std::uint32_t round = 0;
  std::uint32_t parent = 0;
  std::string text;
  std::string reason;
};

struct RoundSummary {
  std::uint32_t round = 0;
  std::size_t generated = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t duplicates = 0;
  std::size_t embed_failures = 0;
  float best_score = 0.0f;
  bool stagnant = false;
};

struct EvolutionRun {
  EvolutionConfig config;
  std::uint16_t layer = 0;
  std::vector<CandidatePhrase> seeds;
  /// Every scored phrase, seeds included, by id.
  std::vector<CandidatePhrase> lineage;
  /// Final survivors, best first (ties by ascending id).
  std::vector<CandidatePhrase> pool;
  std::vector<RoundSummary> rounds;
  std::vector<Rejection> rejections;
  std::vector<std::string> warnings;

  float initial_best() const;
  float final_best() const;
};

/// Seeds are re-scored with `embedder` before the first round. Throws
/// kRejectedInput for no seeds or a seed violating target-at-end, and
/// kDegenerateQuery for a zero latent.
EvolutionRun evolve(const lens::LatentVector& h, std::span<const CandidatePhrase> seeds, PhraseGenerator& generator,
                    PhraseEmbedder& embedder, const EvolutionConfig& config);

struct ImprovementReport {
  double initial = 0.0;
  double final = 0.0;
  /// final - initial, rounded to 1e-9 to drop binary representation noise.
  double delta = 0.0;
  bool improved = false;
  /// Negative delta; survivors are kept so it means seeds were re-scored.
  bool anomaly = false;
};

ImprovementReport improvement_report(double initial_best, double final_best);

nlohmann::json to_json(const EvolutionRun& run);

// ---- live adapters ----

/// Asks a chat-completions model for prefix variants, one JSON list per call.
class ChatPhraseGenerator final : public PhraseGenerator {
 public:
  ChatPhraseGenerator(judge::Transport& transport, std::string model);
  std::vector<std::string> generate(const CandidatePhrase& parent, std::size_t n, std::uint64_t seed) override;

 private:
  judge::Transport& transport_;
  std::string model_;
};

/// Posts {"text", "target_span": [b, e], "layer"} and expects {"vector": [...]}
/// from an extractor-side embedding endpoint.
class HttpPhraseEmbedder final : public PhraseEmbedder {
 public:
  explicit HttpPhraseEmbedder(judge::Transport& transport);
  std::vector<float> embed(std::string_view text, io::ByteSpan target_span, std::uint16_t layer) override;

 private:
  judge::Transport& transport_;
};

}  // namespace latentlens::evolution
