#pragma once

// Deterministic synthetic fixtures: planted nearest-neighbour corpora and
// judge response goldens. No model or network needed.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentlens/formats.hpp"
#include "latentlens/judge.hpp"

namespace latentlens::testkit {

struct PlantedMatch {
  std::uint16_t layer = 0;
  /// Cosine between the query and the planted reference, in (0, 1].
  double cosine = 0.9;
};

struct PlantedQuery {
  std::uint32_t image_id = 0;
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  /// Layer of the visual latent.
  std::uint16_t layer = 0;
  std::vector<PlantedMatch> matches;
};

struct PlantedSpec {
  std::uint32_t dim = 64;
  std::string model_tag = "planted";
  std::vector<std::uint16_t> layers;
  std::uint32_t distractors_per_layer = 100;
  std::uint64_t seed = 1;
  /// Every distractor scores at least this much below the weakest planted
  /// match of each query.
  double margin = 0.05;
  std::uint32_t max_attempts = 1000;
  std::vector<PlantedQuery> queries;
};

nlohmann::json to_json(const PlantedSpec& spec);
/// Throws kConfiguration on missing or invalid fields.
PlantedSpec spec_from_json(const nlohmann::json& j);

/// Each query layer l gets `queries_per_layer` latents at layer l whose
/// `per_query` planted matches all sit in layer l.
PlantedSpec diagonal_spec(std::vector<std::uint16_t> layers, std::uint32_t queries_per_layer,
                          std::uint32_t per_query = 5, std::uint32_t dim = 64, std::uint64_t seed = 1);

/// Layer-0 latents whose planted matches sit in `leap_layer`; other query
/// layers stay diagonal.
PlantedSpec leap_spec(std::vector<std::uint16_t> layers, std::uint16_t leap_layer, std::uint32_t queries_per_layer,
                      std::uint32_t per_query = 5, std::uint32_t dim = 64, std::uint64_t seed = 1);

struct ExpectedMatch {
  std::uint32_t phrase_id = 0;
  std::string phrase_text;
  std::uint16_t token_index = 0;
  std::uint32_t vocab_token_id = 0;
  std::uint16_t source_layer = 0;
  double cosine = 0.0;
  std::string full_word;
};

struct GroundTruth {
  PlantedQuery query;
  /// Planted matches, best first.
  std::vector<ExpectedMatch> expected;
};

struct PlantedCorpus {
  io::DumpHeader ref_header;
  io::DumpHeader latent_header;
  std::vector<io::PhraseRecord> phrases;
  std::vector<io::ReferenceEmbeddingRecord> references;
  std::vector<io::VisualLatentRecord> latents;
  std::vector<GroundTruth> truth;
  /// Embedding matrix with one row per vocab token (the token's reference
  /// vector) for the embedding and logit lenses.
  io::VocabularyMatrix vocabulary;
};

/// Throws kInfeasible when the margin cannot be met within max_attempts
/// draws, kConfiguration for an invalid spec.
PlantedCorpus generate_planted_corpus(const PlantedSpec& spec);

struct FixturePaths {
  std::filesystem::path references;
  std::filesystem::path latents;
  std::filesystem::path manifest;
  std::filesystem::path embedding;
  std::filesystem::path unembedding;
};

/// Writes refs.llns-ref, latents.llns-lat, vocab-emb.llns-vocab,
/// vocab-unemb.llns-vocab and manifest.json into `dir`.
FixturePaths write_planted_fixture(const PlantedCorpus& corpus, const PlantedSpec& spec,
                                   const std::filesystem::path& dir);

nlohmann::json manifest_json(const PlantedCorpus& corpus, const PlantedSpec& spec);

/// A latent dump where every token has the same vector at every layer.
void write_constant_latents(const std::filesystem::path& path, std::uint32_t dim, std::vector<std::uint16_t> layers,
                            std::uint32_t images, std::uint16_t grid);

/// Pseudo-word for an integer, unique per value ("kalo", "mire", ...).
std::string pseudo_word(std::uint64_t n);

// ---- judge goldens ----

/// A fixed request with tiny images and five candidates.
judge::JudgeRequest golden_request();

struct JudgeGoldens {
  std::string well_formed;       // interpretable, concrete ["clocks"]
  std::string fenced;            // same object inside ```json fences
  std::string chat_wrapped;      // same object as a chat-completions response
  std::string outside_candidate; // lists a word that is not a candidate
  std::string no_json;
  std::string missing_key;
  std::string type_error;
  std::string empty_interpretable;
};

JudgeGoldens judge_goldens();

}  // namespace latentlens::testkit
