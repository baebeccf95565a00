#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentlens/corpus_index.hpp"
#include "latentlens/formats.hpp"

namespace latentlens::lens {

inline constexpr std::size_t kDefaultTopK = 5;

enum class Modality : std::uint8_t { kVisual = 0, kText = 1 };

/// A hidden state to interpret. For visual tokens `source_id` is the image
/// id and (row, col) the patch; for text tokens `source_id` is the phrase id
/// and `row` the token position.
struct LatentVector {
  std::vector<float> values;
  std::uint16_t layer_id = 0;
  Modality modality = Modality::kVisual;
  std::uint32_t source_id = 0;
  std::uint16_t row = 0;
  std::uint16_t col = 0;
};

LatentVector from_record(const io::VisualLatentRecord& record);

struct Match {
  float score = 0.0f;
  /// Token string (embedding/logit lens) or full phrase (latent lens).
  std::string description;
  /// Latent lens only: matched token bytes within `description`.
  std::optional<io::ByteSpan> matched_span;
  /// Latent lens only: layer the reference vector was stored from.
  std::optional<std::uint16_t> source_layer;
  std::uint32_t vocab_token_id = 0;
  /// Row index (embedding/logit) or corpus::ReferenceId (latent).
  std::uint64_t reference_id = 0;
  std::optional<std::uint32_t> phrase_id;
  std::uint16_t token_index = 0;

  bool operator==(const Match&) const = default;
};

/// Cosine similarity against every input-embedding row.
/// Throws kDegenerateQuery for a zero query, kDimensionMismatch on dims.
std::vector<Match> embedding_lens(const LatentVector& h, const io::VocabularyMatrix& emb,
                                  std::size_t k = kDefaultTopK);

struct LogitOptions {
  /// Apply an RMS norm (optionally with per-dimension gain) to h before the
  /// unembedding product. Off by default.
  bool final_norm = false;
  std::vector<float> norm_gain;
  float norm_eps = 1e-5f;
};

/// Raw logits h . row_v against every unembedding row.
std::vector<Match> logit_lens(const LatentVector& h, const io::VocabularyMatrix& unemb,
                              std::size_t k = kDefaultTopK, const LogitOptions& options = {});

struct LatentLensOptions {
  /// Stored layers to search; nullopt searches all of them.
  std::optional<std::vector<std::uint16_t>> layer_filter;
  /// Worker threads for the scan; partial results are merged.
  unsigned threads = 1;
};

/// Exact scan of quantized reference vectors against the normalized query.
std::vector<Match> latent_lens(const LatentVector& h, const corpus::CorpusIndex& index,
                               std::size_t k = kDefaultTopK, const LatentLensOptions& options = {});

enum class LensKind : std::uint8_t { kEmbedding, kLogit, kLatent };

std::string_view to_string(LensKind kind);
/// Accepts "embedding", "logit", "latent". Throws kRejectedInput otherwise.
LensKind parse_lens_kind(std::string_view name);

struct LensMethod {
  LensKind kind = LensKind::kLatent;
  std::optional<std::vector<std::uint16_t>> layer_filter;
  LogitOptions logit;
  unsigned threads = 1;
};

struct LensResources {
  const io::VocabularyMatrix* embedding = nullptr;
  const io::VocabularyMatrix* unembedding = nullptr;
  const corpus::CorpusIndex* index = nullptr;
};

/// Uniform entry point. Throws kConfiguration when the method's resource is
/// missing.
std::vector<Match> describe(const LatentVector& h, const LensMethod& method,
                            const LensResources& resources, std::size_t k = kDefaultTopK);

}  // namespace latentlens::lens
