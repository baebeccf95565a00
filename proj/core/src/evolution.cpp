#include "latentlens/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "latentlens/error.hpp"
#include "latentlens/reservoir.hpp"
#include "latentlens/vector_ops.hpp"
#include "latentlens/word_merge.hpp"

namespace latentlens::evolution {

using nlohmann::json;

void EvolutionConfig::validate() const {
  if (rounds < 1 || variations_per_round < 1 || keep < 1) {
    throw Error(ErrorCode::kConfiguration, "rounds, variations and keep must all be >= 1");
  }
}

EvolutionConfig parse_config(std::string_view spec, EvolutionConfig base) {
  std::stringstream ss{std::string(spec)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfiguration, "expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    std::uint64_t v = 0;
    try {
      std::size_t used = 0;
      v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfiguration, "bad number in '" + item + "'");
    }
    if (key == "rounds") {
      base.rounds = static_cast<std::uint32_t>(v);
    } else if (key == "variations") {
      base.variations_per_round = static_cast<std::uint32_t>(v);
    } else if (key == "keep") {
      base.keep = static_cast<std::uint32_t>(v);
    } else if (key == "seed") {
      base.seed = v;
    } else if (key == "substitute") {
      base.allow_target_substitution = v != 0;
    } else {
      throw Error(ErrorCode::kConfiguration, "unknown evolution setting '" + key + "'");
    }
  }
  base.validate();
  return base;
}

namespace {

bool sep_at(std::string_view text, std::size_t i) {
  return lens::is_word_separator(static_cast<unsigned char>(text[i]));
}

std::size_t content_end(std::string_view text) {
  std::size_t e = text.size();
  while (e > 0 && sep_at(text, e - 1)) --e;
  return e;
}

}  // namespace

std::optional<io::ByteSpan> target_at_end(std::string_view text, std::string_view target) {
  if (target.empty()) return std::nullopt;
  const std::size_t e = content_end(text);
  if (e < target.size()) return std::nullopt;
  const std::size_t b = e - target.size();
  if (text.substr(b, target.size()) != target) return std::nullopt;
  if (b > 0 && !sep_at(text, b - 1)) return std::nullopt;
  return io::ByteSpan{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(e)};
}

std::optional<io::ByteSpan> last_word(std::string_view text) {
  const std::size_t e = content_end(text);
  if (e == 0) return std::nullopt;
  std::size_t b = e;
  while (b > 0 && !sep_at(text, b - 1)) --b;
  return io::ByteSpan{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(e)};
}

CandidatePhrase seed_from_match(const lens::Match& match, const corpus::PhraseTable& table) {
  const lens::MergedWord word = lens::merge_to_full_word(match, table);
  const corpus::Phrase& phrase = table.at(*match.phrase_id);
  CandidatePhrase c;
  c.text = phrase.text.substr(0, word.span.end);
  c.target_token = word.word;
  c.target_span = word.span;
  c.score = match.score;
  return c;
}

float EvolutionRun::initial_best() const {
  float best = -std::numeric_limits<float>::infinity();
  for (const auto& s : seeds) best = std::max(best, s.score);
  return best;
}

float EvolutionRun::final_best() const {
  return pool.empty() ? -std::numeric_limits<float>::infinity() : pool.front().score;
}

namespace {

bool better(const CandidatePhrase& a, const CandidatePhrase& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

struct Scorer {
  std::vector<float> target;
  PhraseEmbedder& embedder;
  std::uint16_t layer;

  // Throws on embedder failure or a bad vector.
  float operator()(std::string_view text, io::ByteSpan span) const {
    const std::vector<float> v = embedder.embed(text, span, layer);
    if (v.size() != target.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "embedder returned dim " + std::to_string(v.size()) +
                                                     ", expected " + std::to_string(target.size()));
    }
    if (!all_finite(v)) throw Error(ErrorCode::kCorruptInput, "embedder returned non-finite values");
    return cosine(v, target);
  }
};

}  // namespace

EvolutionRun evolve(const lens::LatentVector& h, std::span<const CandidatePhrase> seeds, PhraseGenerator& generator,
                    PhraseEmbedder& embedder, const EvolutionConfig& config) {
  config.validate();
  if (seeds.empty()) throw Error(ErrorCode::kRejectedInput, "evolution needs at least one seed phrase");
  EvolutionRun run;
  run.config = config;
  run.layer = h.layer_id;
  const Scorer score{normalized(h.values), embedder, h.layer_id};

  std::unordered_set<std::string> seen;
  std::uint32_t next_id = 0;
  for (const CandidatePhrase& s : seeds) {
    const auto span = target_at_end(s.text, s.target_token);
    if (!span) {
      run.warnings.push_back("seed '" + s.text + "' does not end in '" + s.target_token + "'; skipped");
      continue;
    }
    if (!seen.insert(s.text).second) continue;
    CandidatePhrase c = s;
    c.id = next_id++;
    c.target_span = *span;
    c.parent.reset();
    c.round = 0;
    try {
      c.score = score(c.text, c.target_span);
    } catch (const std::exception& e) {
      run.warnings.push_back("seed '" + s.text + "' could not be embedded: " + e.what());
      continue;
    }
    run.seeds.push_back(c);
    run.lineage.push_back(c);
  }
  if (run.seeds.empty()) throw Error(ErrorCode::kRejectedInput, "no usable seed phrases");

  run.pool = run.seeds;
  std::sort(run.pool.begin(), run.pool.end(), better);
  if (run.pool.size() > config.keep) run.pool.resize(config.keep);

  for (std::uint32_t round = 1; round <= config.rounds; ++round) {
    RoundSummary summary;
    summary.round = round;
    std::vector<CandidatePhrase> children;
    const std::size_t parents = run.pool.size();
    for (std::size_t p = 0; p < parents; ++p) {
      const CandidatePhrase& parent = run.pool[p];
      const std::size_t n = config.variations_per_round / parents + (p < config.variations_per_round % parents);
      if (n == 0) continue;
      const std::uint64_t seed = corpus::mix64(config.seed ^ corpus::mix64((std::uint64_t{round} << 32) | parent.id));
      std::vector<std::string> variants;
      try {
        variants = generator.generate(parent, n, seed);
      } catch (const std::exception& e) {
        run.warnings.push_back("round " + std::to_string(round) + ": generator failed for phrase " +
                               std::to_string(parent.id) + ": " + e.what());
        continue;
      }
      if (variants.size() > n) variants.resize(n);
      for (std::string& text : variants) {
        ++summary.generated;
        const auto reject = [&](RejectionKind kind, std::string reason) {
          ++summary.rejected;
          run.rejections.push_back({kind, round, parent.id, text, std::move(reason)});
        };
        if (!corpus::is_valid_utf8(text)) {
          reject(RejectionKind::kInvalidText, "not valid UTF-8");
          continue;
        }
        std::optional<io::ByteSpan> span;
        std::string target = parent.target_token;
        if (config.allow_target_substitution) {
          span = last_word(text);
          if (span) target = text.substr(span->begin, span->size());
        } else {
          span = target_at_end(text, parent.target_token);
        }
        if (!span) {
          reject(RejectionKind::kConstraint, "target '" + parent.target_token + "' is not the final word");
          continue;
        }
        if (!seen.insert(text).second) {
          ++summary.duplicates;
          continue;
        }
        CandidatePhrase c;
        c.text = std::move(text);
        c.target_token = std::move(target);
        c.target_span = *span;
        c.parent = parent.id;
        c.round = round;
        try {
          c.score = score(c.text, c.target_span);
        } catch (const std::exception& e) {
          ++summary.embed_failures;
          run.rejections.push_back({RejectionKind::kEmbedFailure, round, parent.id, c.text, e.what()});
          continue;
        }
        c.id = next_id++;
        ++summary.accepted;
        run.lineage.push_back(c);
        children.push_back(std::move(c));
      }
    }
    if (summary.accepted == 0) {
      summary.stagnant = true;
      run.warnings.push_back("round " + std::to_string(round) + ": no new valid variants");
    }
    run.pool.insert(run.pool.end(), children.begin(), children.end());
    std::sort(run.pool.begin(), run.pool.end(), better);
    if (run.pool.size() > config.keep) run.pool.resize(config.keep);
    summary.best_score = run.pool.front().score;
    run.rounds.push_back(summary);
  }
  return run;
}

ImprovementReport improvement_report(double initial_best, double final_best) {
  ImprovementReport r;
  r.initial = initial_best;
  r.final = final_best;
  r.delta = std::round((final_best - initial_best) * 1e9) / 1e9;
  r.improved = r.delta > 0.0;
  r.anomaly = r.delta < 0.0;
  return r;
}

namespace {

json candidate_json(const CandidatePhrase& c) {
  return {{"id", c.id},
          {"text", c.text},
          {"target_token", c.target_token},
          {"target_span", {c.target_span.begin, c.target_span.end}},
          {"score", c.score},
          {"parent", c.parent ? json(*c.parent) : json(nullptr)},
          {"round", c.round}};
}

std::string_view kind_name(RejectionKind k) {
  switch (k) {
    case RejectionKind::kConstraint: return "constraint";
    case RejectionKind::kInvalidText: return "invalid_text";
    case RejectionKind::kEmbedFailure: return "embed_failure";
  }
  return "unknown";
}

}  // namespace

json to_json(const EvolutionRun& run) {
  json lineage = json::array(), pool = json::array(), seeds = json::array(), rounds = json::array(),
       rejections = json::array();
  for (const auto& c : run.seeds) seeds.push_back(candidate_json(c));
  for (const auto& c : run.lineage) lineage.push_back(candidate_json(c));
  for (const auto& c : run.pool) pool.push_back(candidate_json(c));
  for (const auto& r : run.rounds) {
    rounds.push_back({{"round", r.round},
                      {"generated", r.generated},
                      {"accepted", r.accepted},
                      {"rejected", r.rejected},
                      {"duplicates", r.duplicates},
                      {"embed_failures", r.embed_failures},
                      {"best_score", r.best_score},
                      {"stagnant", r.stagnant}});
  }
  for (const auto& r : run.rejections) {
    rejections.push_back(
        {{"kind", kind_name(r.kind)}, {"round", r.round}, {"parent", r.parent}, {"text", r.text}, {"reason", r.reason}});
  }
  const auto imp = improvement_report(run.initial_best(), run.final_best());
  return {{"config",
           {{"rounds", run.config.rounds},
            {"variations_per_round", run.config.variations_per_round},
            {"keep", run.config.keep},
            {"seed", run.config.seed},
            {"allow_target_substitution", run.config.allow_target_substitution}}},
          {"layer", run.layer},
          {"seeds", seeds},
          {"lineage", lineage},
          {"pool", pool},
          {"rounds", rounds},
          {"rejections", rejections},
          {"warnings", run.warnings},
          {"improvement",
           {{"initial", imp.initial}, {"final", imp.final}, {"delta", imp.delta}, {"anomaly", imp.anomaly}}}};
}

// ---- live adapters ----

ChatPhraseGenerator::ChatPhraseGenerator(judge::Transport& transport, std::string model)
    : transport_(transport), model_(std::move(model)) {}

std::vector<std::string> ChatPhraseGenerator::generate(const CandidatePhrase& parent, std::size_t n,
                                                       std::uint64_t seed) {
  const std::string prompt =
      "Write " + std::to_string(n) + " variations of the phrase below. Change only the words before the final word \"" +
      parent.target_token + "\", which must stay the last word of every variation. Reply with a JSON list of " +
      "strings and nothing else.\n\nPhrase: " + parent.text;
  json body = json::parse(judge::chat_text_body(model_, prompt));
  body["seed"] = seed & 0x7fffffffffffffffULL;
  const std::string raw = body.dump();
  const judge::TransportResponse resp = transport_.post(raw, judge::sha256_hex(raw));
  if (resp.status < 200 || resp.status >= 300) {
    throw Error(ErrorCode::kIo, "generator endpoint returned HTTP " + std::to_string(resp.status));
  }
  const std::string content = judge::message_content(resp.body);
  const auto open = content.find('[');
  const auto close = content.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw Error(ErrorCode::kCorruptInput, "generator reply has no JSON list");
  }
  json list = json::parse(content.substr(open, close - open + 1), nullptr, false);
  std::vector<std::string> out;
  if (!list.is_array()) throw Error(ErrorCode::kCorruptInput, "generator reply is not a JSON list");
  for (const json& v : list) {
    if (v.is_string()) out.push_back(v.get<std::string>());
  }
  return out;
}

HttpPhraseEmbedder::HttpPhraseEmbedder(judge::Transport& transport) : transport_(transport) {}

std::vector<float> HttpPhraseEmbedder::embed(std::string_view text, io::ByteSpan target_span, std::uint16_t layer) {
  const std::string raw =
      json{{"text", text}, {"target_span", {target_span.begin, target_span.end}}, {"layer", layer}}.dump();
  const judge::TransportResponse resp = transport_.post(raw, judge::sha256_hex(raw));
  if (resp.status < 200 || resp.status >= 300) {
    throw Error(ErrorCode::kIo, "embedder endpoint returned HTTP " + std::to_string(resp.status));
  }
  json j = json::parse(resp.body, nullptr, false);
  if (!j.is_object() || !j.contains("vector") || !j["vector"].is_array()) {
    throw Error(ErrorCode::kCorruptInput, "embedder reply lacks a 'vector' list");
  }
  return j["vector"].get<std::vector<float>>();
}

}  // namespace latentlens::evolution
