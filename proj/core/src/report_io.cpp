#include "latentlens/report_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "latentlens/error.hpp"
#include "latentlens/formats.hpp"
#include "latentlens/version.hpp"

namespace latentlens::report {

namespace {

std::string num(float v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string num_int(T v) {
  return std::to_string(v);
}

template <class T>
T parse_number(const std::string& s, std::string_view what) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kCorruptInput, "bad " + std::string(what) + " '" + s + "'");
  }
  return v;
}

template <class T>
std::optional<T> parse_optional(const std::string& s, std::string_view what) {
  if (s.empty()) return std::nullopt;
  return parse_number<T>(s, what);
}

template <class T>
std::string opt(const std::optional<T>& v) {
  return v ? std::to_string(*v) : std::string();
}

}  // namespace

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos &&
      (field.empty() || field.front() != '#')) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(ErrorCode::kCorruptInput, "table has no column '" + std::string(name) + "'");
}

namespace {

// Reads one record; returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else if (c == '\n') {
      break;
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      break;
    } else {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorCode::kCorruptInput, "unterminated quoted CSV field");
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::vector<std::string> rec;
  while (in.peek() == '#') {
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.comments.push_back(line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1));
  }
  if (!read_record(in, t.header)) return t;
  std::size_t line = 1;
  while (read_record(in, rec)) {
    ++line;
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != t.header.size()) {
      throw Error(ErrorCode::kCorruptInput, "CSV record " + std::to_string(line) + " has " +
                                                std::to_string(rec.size()) + " fields, header has " +
                                                std::to_string(t.header.size()));
    }
    t.rows.push_back(rec);
  }
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_csv(in);
}

std::string provenance(std::optional<std::uint32_t> index_crc) {
  std::string hash = "-";
  if (index_crc) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", *index_crc);
    hash = buf;
  }
  return "latentlens " + std::string(kEngineVersion) + " index " + hash;
}

void write_provenance(std::ostream& out, std::optional<std::uint32_t> index_crc) {
  out << "# " << provenance(index_crc) << '\n';
}

std::uint32_t index_fingerprint(const std::filesystem::path& index_path) {
  std::ifstream in(index_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + index_path.string());
  return io::open_container(in, false).crc;
}

// ---- matches ----

const std::vector<std::string>& match_columns() {
  static const std::vector<std::string> cols{
      "query_key",  "image_id",     "row",          "col",          "layer",
      "method",     "rank",         "score",        "vocab_token_id", "phrase_id",
      "source_layer", "reference_id", "token_index", "description",  "span_begin",
      "span_end",   "full_word",    "full_word_begin", "full_word_end"};
  return cols;
}

void write_match_header(std::ostream& out) { write_csv_row(out, match_columns()); }

void write_match_row(std::ostream& out, const MatchRow& r) {
  const lens::Match& m = r.match;
  write_csv_row(out, {r.query_key,
                      num_int(r.image_id),
                      num_int(r.row),
                      num_int(r.col),
                      num_int(r.layer),
                      r.method,
                      num_int(r.rank),
                      num(m.score),
                      num_int(m.vocab_token_id),
                      opt(m.phrase_id),
                      opt(m.source_layer),
                      num_int(m.reference_id),
                      num_int(m.token_index),
                      m.description,
                      m.matched_span ? num_int(m.matched_span->begin) : "",
                      m.matched_span ? num_int(m.matched_span->end) : "",
                      r.full_word ? r.full_word->word : "",
                      r.full_word ? num_int(r.full_word->span.begin) : "",
                      r.full_word ? num_int(r.full_word->span.end) : ""});
}

void write_matches_csv(std::ostream& out, const std::vector<MatchRow>& rows,
                       std::optional<std::uint32_t> index_crc) {
  write_provenance(out, index_crc);
  write_match_header(out);
  for (const auto& r : rows) write_match_row(out, r);
}

std::vector<MatchRow> read_matches_csv(const CsvTable& t) {
  std::vector<std::size_t> idx;
  for (const auto& c : match_columns()) idx.push_back(t.column(c));
  std::vector<MatchRow> out;
  out.reserve(t.rows.size());
  for (const auto& f : t.rows) {
    auto at = [&](std::size_t i) -> const std::string& { return f[idx[i]]; };
    MatchRow r;
    r.query_key = at(0);
    r.image_id = parse_number<std::uint32_t>(at(1), "image_id");
    r.row = parse_number<std::uint16_t>(at(2), "row");
    r.col = parse_number<std::uint16_t>(at(3), "col");
    r.layer = parse_number<std::uint16_t>(at(4), "layer");
    r.method = at(5);
    r.rank = parse_number<std::uint32_t>(at(6), "rank");
    r.match.score = parse_number<float>(at(7), "score");
    r.match.vocab_token_id = parse_number<std::uint32_t>(at(8), "vocab_token_id");
    r.match.phrase_id = parse_optional<std::uint32_t>(at(9), "phrase_id");
    r.match.source_layer = parse_optional<std::uint16_t>(at(10), "source_layer");
    r.match.reference_id = parse_number<std::uint64_t>(at(11), "reference_id");
    r.match.token_index = parse_number<std::uint16_t>(at(12), "token_index");
    r.match.description = at(13);
    auto sb = parse_optional<std::uint32_t>(at(14), "span_begin");
    auto se = parse_optional<std::uint32_t>(at(15), "span_end");
    if (sb && se) r.match.matched_span = io::ByteSpan{*sb, *se};
    auto fb = parse_optional<std::uint32_t>(at(17), "full_word_begin");
    auto fe = parse_optional<std::uint32_t>(at(18), "full_word_end");
    if (fb && fe) r.full_word = lens::MergedWord{at(16), io::ByteSpan{*fb, *fe}};
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<analysis::QueryMatches> group_by_query(const std::vector<MatchRow>& rows) {
  std::vector<analysis::QueryMatches> out;
  std::unordered_map<std::string, std::size_t> pos;
  for (const auto& r : rows) {
    auto [it, fresh] = pos.emplace(r.query_key, out.size());
    if (fresh) out.push_back({r.query_key, {}});
    out[it->second].matches.push_back(r.match);
  }
  return out;
}

// ---- analysis tables ----

std::string_view to_string(lens::Modality m) { return m == lens::Modality::kVisual ? "visual" : "text"; }

lens::Modality parse_modality(std::string_view name) {
  if (name == "visual") return lens::Modality::kVisual;
  if (name == "text") return lens::Modality::kText;
  throw Error(ErrorCode::kRejectedInput, "unknown modality '" + std::string(name) + "'");
}

void write_alignment_csv(std::ostream& out, const analysis::LayerAlignmentMatrix& m,
                         std::optional<std::uint32_t> index_crc) {
  write_provenance(out, index_crc);
  write_csv_row(out, {"query_layer", "source_layer", "count", "fraction", "queries", "k"});
  for (std::size_t r = 0; r < m.query_layers.size(); ++r) {
    const auto frac = m.row_fractions(r);
    for (std::size_t c = 0; c < m.source_layers.size(); ++c) {
      write_csv_row(out, {num_int(m.query_layers[r]), num_int(m.source_layers[c]), num_int(m.count(r, c)),
                          num(frac[c]), num_int(m.queries_per_row[r]), num_int(m.k)});
    }
  }
}

void write_drift_csv(std::ostream& out, const analysis::DriftCurve& curve) {
  write_provenance(out, std::nullopt);
  write_csv_row(out, {"modality", "layer", "tokens", "mean_cosine"});
  for (const auto& [mod, layers] : curve.mean_cosine) {
    for (const auto& [layer, v] : layers) {
      write_csv_row(out, {std::string(to_string(mod)), num_int(layer),
                          num_int(curve.tokens.at(mod).at(layer)), num(v)});
    }
  }
}

void write_norms_csv(std::ostream& out, const analysis::NormStats& stats) {
  write_provenance(out, std::nullopt);
  write_csv_row(out, {"modality", "layer", "samples", "p99", "max", "bin", "bin_low", "bin_high", "count"});
  for (const auto& [key, g] : stats.groups) {
    for (std::size_t b = 0; b < g.histogram.counts.size(); ++b) {
      write_csv_row(out, {std::string(to_string(key.first)), num_int(key.second), num_int(g.samples), num(g.p99),
                          num(g.max), num_int(b), num(g.histogram.edges[b]), num(g.histogram.edges[b + 1]),
                          num_int(g.histogram.counts[b])});
    }
  }
}

void write_histogram_csv(std::ostream& out, const analysis::Histogram& h) {
  write_provenance(out, std::nullopt);
  write_csv_row(out, {"bin", "bin_low", "bin_high", "count"});
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    write_csv_row(out, {num_int(b), num(h.edges[b]), num(h.edges[b + 1]), num_int(h.counts[b])});
  }
}

void write_overlap_csv(std::ostream& out, const analysis::OverlapReport& r) {
  write_provenance(out, std::nullopt);
  write_csv_row(out, {"queries", "token_overlap", "phrase_overlap"});
  write_csv_row(out, {num_int(r.queries), num(r.token_overlap), num(r.phrase_overlap)});
}

void write_attributes_csv(std::ostream& out, const analysis::AttributeFrequencies& f) {
  write_provenance(out, std::nullopt);
  write_csv_row(out, {"layer", "lexicon", "words", "fraction"});
  for (const auto& [layer, lex] : f.fraction) {
    for (const auto& [name, v] : lex) {
      write_csv_row(out, {num_int(layer), name, num_int(f.words.at(layer)), num(v)});
    }
  }
}

void write_interpretability_csv(std::ostream& out, const analysis::InterpretabilityReport& r) {
  write_provenance(out, std::nullopt);
  write_csv_row(out, {"layer", "total", "interpretable", "fraction", "raw_concrete", "raw_abstract", "raw_global",
                      "exclusive_concrete", "exclusive_abstract", "exclusive_global"});
  for (const auto& [layer, li] : r.layers) {
    write_csv_row(out, {num_int(layer), num_int(li.total), num_int(li.interpretable), num(li.fraction),
                        num(li.raw.concrete), num(li.raw.abstract), num(li.raw.global), num(li.exclusive.concrete),
                        num(li.exclusive.abstract), num(li.exclusive.global)});
  }
}

// ---- JSON ----

using nlohmann::json;

json to_json(const lens::Match& m, const std::optional<lens::MergedWord>& full_word) {
  json j{{"score", m.score},
         {"description", m.description},
         {"vocab_token_id", m.vocab_token_id},
         {"reference_id", m.reference_id},
         {"token_index", m.token_index},
         {"phrase_id", nullptr},
         {"source_layer", nullptr},
         {"matched_span", nullptr},
         {"full_word", nullptr}};
  if (m.phrase_id) j["phrase_id"] = *m.phrase_id;
  if (m.source_layer) j["source_layer"] = *m.source_layer;
  if (m.matched_span) j["matched_span"] = {{"begin", m.matched_span->begin}, {"end", m.matched_span->end}};
  if (full_word) {
    j["full_word"] = {{"word", full_word->word},
                      {"span", {{"begin", full_word->span.begin}, {"end", full_word->span.end}}}};
  }
  return j;
}

json to_json(const analysis::LayerAlignmentMatrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.query_layers.size(); ++r) {
    std::vector<std::uint64_t> counts;
    for (std::size_t c = 0; c < m.source_layers.size(); ++c) counts.push_back(m.count(r, c));
    rows.push_back({{"query_layer", m.query_layers[r]},
                    {"queries", m.queries_per_row[r]},
                    {"counts", counts},
                    {"fractions", m.row_fractions(r)}});
  }
  return {{"k", m.k}, {"source_layers", m.source_layers}, {"rows", rows}};
}

json to_json(const analysis::DriftCurve& c) {
  json out = json::object();
  for (const auto& [mod, layers] : c.mean_cosine) {
    json arr = json::array();
    for (const auto& [layer, v] : layers) {
      arr.push_back({{"layer", layer}, {"mean_cosine", v}, {"tokens", c.tokens.at(mod).at(layer)}});
    }
    out[std::string(to_string(mod))] = arr;
  }
  return out;
}

json to_json(const analysis::Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

json to_json(const analysis::NormStats& s) {
  json arr = json::array();
  for (const auto& [key, g] : s.groups) {
    arr.push_back({{"modality", to_string(key.first)},
                   {"layer", key.second},
                   {"samples", g.samples},
                   {"p99", g.p99},
                   {"max", g.max},
                   {"histogram", to_json(g.histogram)}});
  }
  return {{"groups", arr}};
}

json to_json(const analysis::OverlapReport& r) {
  return {{"queries", r.queries}, {"token_overlap", r.token_overlap}, {"phrase_overlap", r.phrase_overlap}};
}

json to_json(const analysis::AttributeFrequencies& f) {
  json arr = json::array();
  for (const auto& [layer, lex] : f.fraction) {
    arr.push_back({{"layer", layer}, {"words", f.words.at(layer)}, {"fractions", lex}});
  }
  return {{"layers", arr}};
}

json to_json(const analysis::InterpretabilityReport& r) {
  auto cats = [](const analysis::CategoryFractions& c) {
    return json{{"concrete", c.concrete}, {"abstract", c.abstract}, {"global", c.global}};
  };
  json arr = json::array();
  for (const auto& [layer, li] : r.layers) {
    arr.push_back({{"layer", layer},
                   {"total", li.total},
                   {"interpretable", li.interpretable},
                   {"fraction", li.fraction},
                   {"raw", cats(li.raw)},
                   {"exclusive", cats(li.exclusive)}});
  }
  return {{"layers", arr}};
}

json to_json(const judge::JudgeVerdict& v) {
  return {{"reasoning", v.reasoning},
          {"interpretable", v.interpretable},
          {"concrete_words", v.concrete_words},
          {"abstract_words", v.abstract_words},
          {"global_words", v.global_words}};
}

judge::JudgeVerdict verdict_from_json(const json& j) {
  try {
    judge::JudgeVerdict v;
    v.reasoning = j.at("reasoning").get<std::string>();
    v.interpretable = j.at("interpretable").get<bool>();
    v.concrete_words = j.at("concrete_words").get<std::vector<std::string>>();
    v.abstract_words = j.at("abstract_words").get<std::vector<std::string>>();
    v.global_words = j.at("global_words").get<std::vector<std::string>>();
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptInput, std::string("bad verdict JSON: ") + e.what());
  }
}

}  // namespace latentlens::report
