#pragma once

// Tabular (CSV) and JSON renderings of lens matches and analysis results.
// CSV files start with a provenance comment line, then a header row.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentlens/analysis.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/verdict.hpp"
#include "latentlens/word_merge.hpp"

namespace latentlens::report {

// ---- CSV primitives (RFC 4180 quoting) ----

std::string csv_escape(std::string_view field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

struct CsvTable {
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name; throws kCorruptInput if absent.
  std::size_t column(std::string_view name) const;
};

/// Parses a table written by this module. Lines starting with '#' before
/// the header are comments. Throws kCorruptInput on ragged rows or
/// unterminated quotes.
CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

/// "latentlens <version> index <hash>"; hash is "-" when no index is involved.
std::string provenance(std::optional<std::uint32_t> index_crc);
void write_provenance(std::ostream& out, std::optional<std::uint32_t> index_crc);

/// CRC32 of an index file's payload, read from its trailer.
std::uint32_t index_fingerprint(const std::filesystem::path& index_path);

// ---- lens matches ----

/// One match of one query, flattened for tables.
struct MatchRow {
  std::string query_key;
  std::uint32_t image_id = 0;
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  std::uint16_t layer = 0;
  std::string method;
  std::uint32_t rank = 0;  // 1-based
  lens::Match match;
  std::optional<lens::MergedWord> full_word;
};

const std::vector<std::string>& match_columns();
void write_match_header(std::ostream& out);
void write_match_row(std::ostream& out, const MatchRow& row);
void write_matches_csv(std::ostream& out, const std::vector<MatchRow>& rows,
                       std::optional<std::uint32_t> index_crc);
std::vector<MatchRow> read_matches_csv(const CsvTable& table);

/// Groups rows by query_key (first-appearance order) for overlap analysis.
std::vector<analysis::QueryMatches> group_by_query(const std::vector<MatchRow>& rows);

// ---- analysis tables ----

void write_alignment_csv(std::ostream& out, const analysis::LayerAlignmentMatrix& m,
                         std::optional<std::uint32_t> index_crc);
void write_drift_csv(std::ostream& out, const analysis::DriftCurve& curve);
void write_norms_csv(std::ostream& out, const analysis::NormStats& stats);
void write_histogram_csv(std::ostream& out, const analysis::Histogram& h);
void write_overlap_csv(std::ostream& out, const analysis::OverlapReport& r);
void write_attributes_csv(std::ostream& out, const analysis::AttributeFrequencies& f);
void write_interpretability_csv(std::ostream& out, const analysis::InterpretabilityReport& r);

// ---- JSON ----

std::string_view to_string(lens::Modality m);
lens::Modality parse_modality(std::string_view name);

nlohmann::json to_json(const lens::Match& m, const std::optional<lens::MergedWord>& full_word = std::nullopt);
nlohmann::json to_json(const analysis::LayerAlignmentMatrix& m);
nlohmann::json to_json(const analysis::DriftCurve& c);
nlohmann::json to_json(const analysis::Histogram& h);
nlohmann::json to_json(const analysis::NormStats& s);
nlohmann::json to_json(const analysis::OverlapReport& r);
nlohmann::json to_json(const analysis::AttributeFrequencies& f);
nlohmann::json to_json(const analysis::InterpretabilityReport& r);
nlohmann::json to_json(const judge::JudgeVerdict& v);
judge::JudgeVerdict verdict_from_json(const nlohmann::json& j);

}  // namespace latentlens::report
