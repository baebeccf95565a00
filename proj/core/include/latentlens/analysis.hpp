#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "latentlens/corpus_index.hpp"
#include "latentlens/formats.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/verdict.hpp"

namespace latentlens::analysis {

using lens::Modality;

// ---------------------------------------------------------------------------
// Layer alignment

/// Counts of top-k source layers per query layer. Rows are query layers,
/// columns stored layers; both ascending.
struct LayerAlignmentMatrix {
  std::vector<std::uint16_t> query_layers;
  std::vector<std::uint16_t> source_layers;
  std::vector<std::uint64_t> counts;  // row-major
  std::vector<std::uint64_t> queries_per_row;
  std::size_t k = lens::kDefaultTopK;

  std::uint64_t count(std::size_t row, std::size_t col) const {
    return counts[row * source_layers.size() + col];
  }
  std::uint64_t row_total(std::size_t row) const;
  /// Fractions summing to 1 for nonempty rows, all zero for empty rows.
  std::vector<double> row_fractions(std::size_t row) const;
  std::optional<std::size_t> row_of(std::uint16_t query_layer) const;
  std::optional<std::size_t> col_of(std::uint16_t source_layer) const;
};

/// Fold over latent-lens results; partial accumulators merge associatively.
class LayerAlignmentAccumulator {
 public:
  LayerAlignmentAccumulator(std::vector<std::uint16_t> source_layers, std::size_t k);

  void add(std::uint16_t query_layer, std::span<const lens::Match> matches);
  void merge(const LayerAlignmentAccumulator& other);
  LayerAlignmentMatrix result() const;

 private:
  std::vector<std::uint16_t> source_layers_;
  std::size_t k_;
  std::map<std::uint16_t, std::vector<std::uint64_t>> rows_;
  std::map<std::uint16_t, std::uint64_t> queries_;
};

/// Runs the latent lens over every stored layer for each latent and tallies
/// the source layers of the top-k (counts pooled globally over images).
LayerAlignmentMatrix layer_alignment(std::span<const lens::LatentVector> latents,
                                     const corpus::CorpusIndex& index, std::size_t k = lens::kDefaultTopK,
                                     unsigned threads = 1);
LayerAlignmentMatrix layer_alignment(io::DumpReader& latents, const corpus::CorpusIndex& index,
                                     std::size_t k = lens::kDefaultTopK, unsigned threads = 1);

// ---------------------------------------------------------------------------
// Token drift

struct TokenState {
  /// Identity of the token across layers (image/patch or phrase/position).
  std::string key;
  Modality modality = Modality::kVisual;
  std::uint16_t layer = 0;
  std::vector<float> vector;
};

/// Mean over tokens of cosine(h^layer, h^0), per modality.
struct DriftCurve {
  std::map<Modality, std::map<std::uint16_t, double>> mean_cosine;
  std::map<Modality, std::map<std::uint16_t, std::uint64_t>> tokens;
};

/// Throws kRejectedInput naming every token that lacks a layer-0 state.
DriftCurve token_drift(std::span<const TokenState> states);

std::string visual_token_key(std::uint32_t image_id, std::uint16_t row, std::uint16_t col);
std::string text_token_key(std::uint32_t phrase_id, std::uint16_t token_index);

// ---------------------------------------------------------------------------
// Norms and histograms

struct Histogram {
  /// edges.size() == counts.size() + 1; bin i is [edges[i], edges[i+1]).
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const;
};

struct NormSample {
  Modality modality = Modality::kVisual;
  std::uint16_t layer = 0;
  float norm = 0.0f;
};

struct NormGroupStats {
  Histogram histogram;
  double p99 = 0.0;
  double max = 0.0;
  std::uint64_t samples = 0;
};

inline constexpr std::size_t kNormHistogramBins = 60;

/// Per (modality, layer) statistics. Histograms use log-spaced bins whose
/// range is shared by all layers of one modality; norms at or below the
/// smallest positive norm land in bin 0.
struct NormStats {
  std::map<std::pair<Modality, std::uint16_t>, NormGroupStats> groups;
};

NormStats norm_stats(std::span<const NormSample> samples, std::size_t bins = kNormHistogramBins);

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
/// Throws kRejectedInput for an empty sample.
double nearest_rank_percentile(std::vector<double> values, double percent);

/// Histogram of the individual dimension values of one vector, with
/// equal-width bins over [min, max].
Histogram value_histogram(std::span<const float> values, std::size_t bins);

/// The latent with the largest stored norm and its dimension histogram.
struct MaxNormToken {
  io::VisualLatentRecord record;
  Histogram dimension_histogram;
};
std::optional<MaxNormToken> max_norm_token(io::DumpReader& latents, std::size_t bins = 100);

inline constexpr double kSimilarityBinWidth = 0.02;
/// Scores this far outside [-1, 1] are quantization noise and are clamped.
inline constexpr double kSimilarityRangeSlack = 1e-3;

/// Fixed 100-bin histogram of width 0.02 over [-1, 1]; the value 1.0 falls
/// in the last bin. Throws kCorruptInput for scores outside the range.
Histogram similarity_histogram(std::span<const float> scores);

// ---------------------------------------------------------------------------
// Top-5 overlap between two runs

struct QueryMatches {
  std::string query_key;
  std::vector<lens::Match> matches;
};

struct OverlapReport {
  double token_overlap = 0.0;
  double phrase_overlap = 0.0;
  std::size_t queries = 0;
};

/// Mean set intersection sizes of vocab token ids and of phrase ids.
/// Throws kRejectedInput unless both runs list the same query keys in the
/// same order.
OverlapReport nn_overlap(std::span<const QueryMatches> run_a, std::span<const QueryMatches> run_b);

// ---------------------------------------------------------------------------
// Visual attribute words

struct Lexicon {
  std::string name;
  std::unordered_set<std::string> words;
};

struct LayerWord {
  std::uint16_t layer = 0;
  std::string word;
};

struct AttributeFrequencies {
  /// layer -> lexicon name -> fraction of words in that lexicon.
  std::map<std::uint16_t, std::map<std::string, double>> fraction;
  std::map<std::uint16_t, std::uint64_t> words;
};

/// Words are ASCII-lowercased before lookup.
AttributeFrequencies attribute_counts(std::span<const LayerWord> words, std::span<const Lexicon> lexicons);

// ---------------------------------------------------------------------------
// Interpretability and agreement

struct LayerVerdict {
  std::uint16_t layer = 0;
  judge::JudgeVerdict verdict;
};

struct CategoryFractions {
  double concrete = 0.0;
  double abstract = 0.0;
  double global = 0.0;
};

struct LayerInterpretability {
  std::uint64_t total = 0;
  std::uint64_t interpretable = 0;
  double fraction = 0.0;
  /// Over interpretable tokens: share with a nonempty list (multi-label).
  CategoryFractions raw;
  /// Over interpretable tokens: each counted once, concrete > abstract > global.
  CategoryFractions exclusive;
};

/// Layers without verdicts are absent from the map.
struct InterpretabilityReport {
  std::map<std::uint16_t, LayerInterpretability> layers;
};

InterpretabilityReport interpretability_rate(std::span<const LayerVerdict> verdicts);

/// Binary Cohen's kappa with marginal-product chance agreement. When chance
/// agreement is 1, returns 1 if observed agreement is 1 and 0 otherwise.
double cohens_kappa(const std::vector<bool>& labels_a, const std::vector<bool>& labels_b);

}  // namespace latentlens::analysis
