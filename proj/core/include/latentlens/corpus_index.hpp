#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "latentlens/formats.hpp"
#include "latentlens/phrase_table.hpp"
#include "latentlens/quantizer.hpp"
#include "latentlens/reservoir.hpp"

namespace latentlens::corpus {

inline constexpr std::uint32_t kDefaultCap = 20;

/// {1, 2, 4, 8, 16, 24, L-2, L-1} restricted to [0, L), sorted, unique.
std::vector<std::uint16_t> default_layer_set(std::uint16_t num_layers);

/// Parses "1,2,4,8,16,24,L-2,L-1". Terms using L need `num_layers`.
std::vector<std::uint16_t> parse_layer_spec(std::string_view spec,
                                            std::optional<std::uint16_t> num_layers);

/// Contiguous storage for every entry of one layer. Entry i owns
/// codes[i*dim, (i+1)*dim) and the i-th element of each column.
struct LayerShard {
  std::uint16_t layer_id = 0;
  std::uint32_t dim = 0;
  std::vector<std::int8_t> codes;
  std::vector<float> scales;
  std::vector<float> raw_norms;
  std::vector<std::uint32_t> phrase_ids;
  std::vector<std::uint16_t> token_indices;
  std::vector<std::uint32_t> vocab_token_ids;

  std::size_t size() const { return scales.size(); }
  std::span<const std::int8_t> codes_of(std::size_t i) const {
    return std::span<const std::int8_t>(codes).subspan(i * dim, dim);
  }
  bool operator==(const LayerShard&) const = default;
};

struct ReferenceEntry {
  QuantizedVector vector;
  std::uint32_t phrase_id = 0;
  std::uint16_t token_index = 0;
  std::uint32_t vocab_token_id = 0;
  std::uint16_t layer_id = 0;
  float raw_l2_norm = 0.0f;
};

/// Global entry identifier: shard ordinal (ascending layer) in the high
/// bits, position within the shard in the low 40 bits. Ascending id is the
/// tie-break order for equal scores.
using ReferenceId = std::uint64_t;
inline constexpr unsigned kReferenceIndexBits = 40;
constexpr ReferenceId make_reference_id(std::size_t shard, std::size_t index) {
  return (static_cast<std::uint64_t>(shard) << kReferenceIndexBits) | index;
}
constexpr std::size_t reference_shard(ReferenceId id) { return id >> kReferenceIndexBits; }
constexpr std::size_t reference_index(ReferenceId id) {
  return id & ((std::uint64_t{1} << kReferenceIndexBits) - 1);
}

struct BuildMetadata {
  std::uint32_t cap = kDefaultCap;
  std::uint64_t seed = 0;
  std::string model_tag;
  std::uint32_t dim = 0;
  bool exclude_special = true;

  bool operator==(const BuildMetadata&) const = default;
};

struct LayerStats {
  std::uint16_t layer_id = 0;
  std::uint64_t entries = 0;
  std::uint64_t unique_tokens = 0;
  std::uint64_t occurrences = 0;
};

/// Key for per-(token, layer) occurrence counters.
using TokenLayer = std::pair<std::uint32_t, std::uint16_t>;

/// Immutable, layer-sharded reference set. Safe to share across threads.
class CorpusIndex {
 public:
  CorpusIndex() = default;
  CorpusIndex(BuildMetadata metadata, PhraseTable phrases, std::vector<LayerShard> shards,
              std::map<TokenLayer, std::uint64_t> counters);

  const BuildMetadata& metadata() const { return metadata_; }
  std::uint32_t dim() const { return metadata_.dim; }
  const PhraseTable& phrases() const { return phrases_; }
  const std::vector<LayerShard>& shards() const { return shards_; }
  const std::map<TokenLayer, std::uint64_t>& counters() const { return counters_; }

  /// Shard ordinal for a layer, or nullopt if the layer is not stored.
  std::optional<std::size_t> shard_ordinal(std::uint16_t layer) const;
  std::vector<std::uint16_t> layers() const;
  std::size_t entry_count() const;
  std::uint64_t occurrences(std::uint32_t vocab_token_id, std::uint16_t layer) const;

  /// Throws Error(kNotFound) for an id outside the index.
  ReferenceEntry entry(ReferenceId id) const;

  std::vector<LayerStats> stats() const;

  bool operator==(const CorpusIndex& other) const;

 private:
  BuildMetadata metadata_;
  PhraseTable phrases_;
  std::vector<LayerShard> shards_;
  std::map<TokenLayer, std::uint64_t> counters_;
};

struct BuildOptions {
  std::uint32_t cap = kDefaultCap;
  std::uint64_t seed = 0;
  /// Layers to keep. Empty means every layer declared by the first dump.
  std::vector<std::uint16_t> layers;
  /// Drop records whose phrase token carries the special flag.
  bool exclude_special = true;
};

struct BuildCounters {
  std::uint64_t records = 0;
  std::uint64_t admitted = 0;
  std::uint64_t skipped_duplicate_phrase = 0;
  std::uint64_t skipped_special = 0;
  std::uint64_t skipped_layer = 0;
};

/// Streams reference records into per-(token, layer) reservoirs and
/// quantizes admitted vectors (after L2 normalization) into layer shards.
class IndexBuilder {
 public:
  explicit IndexBuilder(BuildOptions options);

  void add_dump(io::DumpReader& reader);

  /// Lower-level entry points used by add_dump and by in-memory callers.
  void begin_stream(const io::DumpHeader& header, std::span<const io::PhraseRecord> phrases);
  void add_record(const io::ReferenceEmbeddingRecord& record);

  const BuildCounters& counters() const { return counters_; }

  CorpusIndex finish();

 private:
  struct LocalPhrase {
    std::uint32_t global_id;
    bool first_occurrence;
  };

  LayerShard& shard_for(std::uint16_t layer);

  BuildOptions options_;
  std::optional<BuildMetadata> metadata_;
  std::vector<std::uint16_t> stream_layers_;
  std::unordered_map<std::uint32_t, LocalPhrase> local_phrases_;
  PhraseTable phrases_;
  std::map<std::uint16_t, LayerShard> shards_;
  std::unordered_map<std::uint64_t, Reservoir> reservoirs_;
  BuildCounters counters_;
  std::vector<float> scratch_;
};

CorpusIndex build_index(std::span<const std::filesystem::path> dumps, const BuildOptions& options);

void save_index(const CorpusIndex& index, std::ostream& out);
void save_index(const CorpusIndex& index, const std::filesystem::path& path);
CorpusIndex load_index(std::istream& in);
CorpusIndex load_index(const std::filesystem::path& path);

}  // namespace latentlens::corpus
