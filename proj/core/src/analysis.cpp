#include "latentlens/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_map>

#include "latentlens/error.hpp"
#include "latentlens/vector_ops.hpp"

namespace latentlens::analysis {

// ---- layer alignment ----

std::uint64_t LayerAlignmentMatrix::row_total(std::size_t row) const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < source_layers.size(); ++c) t += count(row, c);
  return t;
}

std::vector<double> LayerAlignmentMatrix::row_fractions(std::size_t row) const {
  std::vector<double> out(source_layers.size(), 0.0);
  const std::uint64_t total = row_total(row);
  if (total == 0) return out;
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = static_cast<double>(count(row, c)) / static_cast<double>(total);
  }
  return out;
}

std::optional<std::size_t> LayerAlignmentMatrix::row_of(std::uint16_t layer) const {
  auto it = std::find(query_layers.begin(), query_layers.end(), layer);
  if (it == query_layers.end()) return std::nullopt;
  return static_cast<std::size_t>(it - query_layers.begin());
}

std::optional<std::size_t> LayerAlignmentMatrix::col_of(std::uint16_t layer) const {
  auto it = std::find(source_layers.begin(), source_layers.end(), layer);
  if (it == source_layers.end()) return std::nullopt;
  return static_cast<std::size_t>(it - source_layers.begin());
}

LayerAlignmentAccumulator::LayerAlignmentAccumulator(std::vector<std::uint16_t> source_layers, std::size_t k)
    : source_layers_(std::move(source_layers)), k_(k) {
  std::sort(source_layers_.begin(), source_layers_.end());
}

void LayerAlignmentAccumulator::add(std::uint16_t query_layer, std::span<const lens::Match> matches) {
  auto& row = rows_[query_layer];
  row.resize(source_layers_.size(), 0);
  ++queries_[query_layer];
  for (const lens::Match& m : matches) {
    if (!m.source_layer) throw Error(ErrorCode::kRejectedInput, "alignment needs latent-lens matches");
    auto it = std::lower_bound(source_layers_.begin(), source_layers_.end(), *m.source_layer);
    if (it == source_layers_.end() || *it != *m.source_layer) {
      throw Error(ErrorCode::kRejectedInput, "match from unknown source layer");
    }
    ++row[static_cast<std::size_t>(it - source_layers_.begin())];
  }
}

void LayerAlignmentAccumulator::merge(const LayerAlignmentAccumulator& other) {
  for (const auto& [layer, counts] : other.rows_) {
    auto& row = rows_[layer];
    row.resize(source_layers_.size(), 0);
    for (std::size_t c = 0; c < counts.size(); ++c) row[c] += counts[c];
  }
  for (const auto& [layer, n] : other.queries_) queries_[layer] += n;
}

LayerAlignmentMatrix LayerAlignmentAccumulator::result() const {
  LayerAlignmentMatrix m;
  m.k = k_;
  m.source_layers = source_layers_;
  for (const auto& [layer, counts] : rows_) {
    m.query_layers.push_back(layer);
    m.counts.insert(m.counts.end(), counts.begin(), counts.end());
    m.queries_per_row.push_back(queries_.at(layer));
  }
  return m;
}

namespace {

void accumulate_alignment(std::span<const lens::LatentVector> latents, const corpus::CorpusIndex& index,
                          std::size_t k, unsigned threads, LayerAlignmentAccumulator& total) {
  const unsigned workers = static_cast<unsigned>(
      std::clamp<std::size_t>(latents.size(), 1, std::max(1u, threads)));
  std::vector<LayerAlignmentAccumulator> parts(workers, LayerAlignmentAccumulator(index.layers(), k));
  const auto run = [&](unsigned w) {
    for (std::size_t i = w; i < latents.size(); i += workers) {
      parts[w].add(latents[i].layer_id, lens::latent_lens(latents[i], index, k));
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (const auto& p : parts) total.merge(p);
}

}  // namespace

LayerAlignmentMatrix layer_alignment(std::span<const lens::LatentVector> latents,
                                     const corpus::CorpusIndex& index, std::size_t k, unsigned threads) {
  LayerAlignmentAccumulator total(index.layers(), k);
  accumulate_alignment(latents, index, k, threads, total);
  return total.result();
}

LayerAlignmentMatrix layer_alignment(io::DumpReader& latents, const corpus::CorpusIndex& index, std::size_t k,
                                     unsigned threads) {
  if (latents.header().dim != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "latent dump dim differs from index dim");
  }
  LayerAlignmentAccumulator total(index.layers(), k);
  std::vector<lens::LatentVector> batch;
  while (auto rec = latents.next_latent()) {
    batch.push_back(lens::from_record(*rec));
    if (batch.size() == 1024) {
      accumulate_alignment(batch, index, k, threads, total);
      batch.clear();
    }
  }
  accumulate_alignment(batch, index, k, threads, total);
  return total.result();
}

// ---- drift ----

std::string visual_token_key(std::uint32_t image_id, std::uint16_t row, std::uint16_t col) {
  return "v:" + std::to_string(image_id) + ":" + std::to_string(row) + ":" + std::to_string(col);
}

std::string text_token_key(std::uint32_t phrase_id, std::uint16_t token_index) {
  return "t:" + std::to_string(phrase_id) + ":" + std::to_string(token_index);
}

DriftCurve token_drift(std::span<const TokenState> states) {
  std::unordered_map<std::string, const TokenState*> base;
  for (const TokenState& s : states) {
    if (s.layer != 0) continue;
    if (!base.emplace(s.key, &s).second) {
      throw Error(ErrorCode::kRejectedInput, "token '" + s.key + "' has two layer-0 states");
    }
  }
  std::vector<std::string> missing;
  for (const TokenState& s : states) {
    if (!base.count(s.key)) missing.push_back(s.key);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw Error(ErrorCode::kRejectedInput, "tokens without a layer-0 state: " + list);
  }

  std::map<Modality, std::map<std::uint16_t, double>> sums;
  DriftCurve curve;
  for (const TokenState& s : states) {
    const TokenState& b = *base.at(s.key);
    if (b.modality != s.modality) throw Error(ErrorCode::kRejectedInput, "token '" + s.key + "' changes modality");
    const double c = s.layer == 0 ? 1.0 : static_cast<double>(cosine(s.vector, b.vector));
    sums[s.modality][s.layer] += c;
    ++curve.tokens[s.modality][s.layer];
  }
  for (const auto& [mod, layers] : sums) {
    for (const auto& [layer, sum] : layers) {
      curve.mean_cosine[mod][layer] =
          layer == 0 ? 1.0 : sum / static_cast<double>(curve.tokens[mod][layer]);
    }
  }
  return curve;
}

// ---- histograms ----

std::uint64_t Histogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

namespace {

// Bin for x given ascending edges; `guess` comes from the closed-form
// formula and is corrected against the stored edges so binning agrees
// exactly with [edges[i], edges[i+1]).
std::size_t settle_bin(const std::vector<double>& edges, double x, long guess) {
  const long bins = static_cast<long>(edges.size()) - 1;
  long b = std::clamp(guess, 0L, bins - 1);
  while (b > 0 && x < edges[b]) --b;
  while (b < bins - 1 && x >= edges[b + 1]) ++b;
  return static_cast<std::size_t>(b);
}

}  // namespace

double nearest_rank_percentile(std::vector<double> values, double percent) {
  if (values.empty()) throw Error(ErrorCode::kRejectedInput, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

NormStats norm_stats(std::span<const NormSample> samples, std::size_t bins) {
  if (bins == 0) throw Error(ErrorCode::kRejectedInput, "histogram needs at least one bin");
  struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
  };
  std::map<Modality, Range> ranges;
  std::map<std::pair<Modality, std::uint16_t>, std::vector<double>> groups;
  for (const NormSample& s : samples) {
    const double x = s.norm;
    if (!std::isfinite(x) || x < 0.0) throw Error(ErrorCode::kCorruptInput, "norm must be finite and >= 0");
    Range& r = ranges[s.modality];
    if (x > 0.0) r.lo = std::min(r.lo, x);
    r.hi = std::max(r.hi, x);
    groups[{s.modality, s.layer}].push_back(x);
  }

  std::map<Modality, std::vector<double>> edges;
  for (auto& [mod, r] : ranges) {
    if (!std::isfinite(r.lo)) r.lo = r.hi;
    std::vector<double> e(bins + 1);
    if (r.hi > r.lo && r.lo > 0.0) {
      const double a = std::log(r.lo), b = std::log(r.hi);
      for (std::size_t i = 0; i <= bins; ++i) e[i] = std::exp(a + (b - a) * static_cast<double>(i) / bins);
      e.front() = r.lo;
      e.back() = r.hi;
    } else {
      std::fill(e.begin(), e.end(), r.lo);
    }
    edges[mod] = std::move(e);
  }

  NormStats out;
  for (auto& [key, values] : groups) {
    const auto& e = edges.at(key.first);
    const Range& r = ranges.at(key.first);
    NormGroupStats g;
    g.samples = values.size();
    g.histogram.edges = e;
    g.histogram.counts.assign(bins, 0);
    const bool spread = r.hi > r.lo && r.lo > 0.0;
    for (double x : values) {
      std::size_t b = 0;
      if (spread && x > r.lo) {
        const double pos = (std::log(x) - std::log(r.lo)) / (std::log(r.hi) - std::log(r.lo)) * bins;
        b = settle_bin(e, x, static_cast<long>(std::floor(pos)));
      }
      ++g.histogram.counts[b];
    }
    g.max = *std::max_element(values.begin(), values.end());
    g.p99 = nearest_rank_percentile(values, 99.0);
    out.groups.emplace(key, std::move(g));
  }
  return out;
}

Histogram value_histogram(std::span<const float> values, std::size_t bins) {
  if (bins == 0) throw Error(ErrorCode::kRejectedInput, "histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1, 0.0);
  if (values.empty()) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / bins;
  h.edges.back() = hi;
  for (float v : values) {
    std::size_t b = 0;
    if (hi > lo) b = settle_bin(h.edges, v, static_cast<long>(std::floor((v - lo) / (hi - lo) * bins)));
    ++h.counts[b];
  }
  return h;
}

std::optional<MaxNormToken> max_norm_token(io::DumpReader& latents, std::size_t bins) {
  std::optional<io::VisualLatentRecord> best;
  while (auto rec = latents.next_latent()) {
    if (!best || rec->raw_l2_norm > best->raw_l2_norm) best = std::move(rec);
  }
  if (!best) return std::nullopt;
  MaxNormToken out;
  out.dimension_histogram = value_histogram(best->vector, bins);
  out.record = std::move(*best);
  return out;
}

Histogram similarity_histogram(std::span<const float> scores) {
  constexpr std::size_t kBins = 100;
  Histogram h;
  h.edges.resize(kBins + 1);
  for (std::size_t i = 0; i <= kBins; ++i) h.edges[i] = (static_cast<double>(i) - 50.0) / 50.0;
  h.counts.assign(kBins, 0);
  for (float s : scores) {
    const double x = s;
    if (!std::isfinite(x) || x < -1.0 - kSimilarityRangeSlack || x > 1.0 + kSimilarityRangeSlack) {
      throw Error(ErrorCode::kCorruptInput, "similarity " + std::to_string(x) + " outside [-1, 1]");
    }
    const double c = std::clamp(x, -1.0, 1.0);
    ++h.counts[settle_bin(h.edges, c, static_cast<long>(std::floor((c + 1.0) / kSimilarityBinWidth)))];
  }
  return h;
}

// ---- overlap ----

OverlapReport nn_overlap(std::span<const QueryMatches> a, std::span<const QueryMatches> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kRejectedInput, "runs cover " + std::to_string(a.size()) + " and " +
                                               std::to_string(b.size()) + " queries");
  }
  OverlapReport r;
  r.queries = a.size();
  if (a.empty()) return r;
  double tok = 0.0, phr = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].query_key != b[i].query_key) {
      throw Error(ErrorCode::kRejectedInput, "query " + std::to_string(i) + " is '" + a[i].query_key +
                                                 "' in one run and '" + b[i].query_key + "' in the other");
    }
    std::set<std::uint32_t> ta, tb, pa, pb;
    for (const auto& m : a[i].matches) {
      ta.insert(m.vocab_token_id);
      if (m.phrase_id) pa.insert(*m.phrase_id);
    }
    for (const auto& m : b[i].matches) {
      tb.insert(m.vocab_token_id);
      if (m.phrase_id) pb.insert(*m.phrase_id);
    }
    std::size_t nt = 0, np = 0;
    for (auto t : ta) nt += tb.count(t);
    for (auto p : pa) np += pb.count(p);
    tok += static_cast<double>(nt);
    phr += static_cast<double>(np);
  }
  r.token_overlap = tok / static_cast<double>(a.size());
  r.phrase_overlap = phr / static_cast<double>(a.size());
  return r;
}

// ---- attributes ----

AttributeFrequencies attribute_counts(std::span<const LayerWord> words, std::span<const Lexicon> lexicons) {
  AttributeFrequencies out;
  std::map<std::uint16_t, std::map<std::string, std::uint64_t>> hits;
  for (const LayerWord& w : words) {
    std::string lower = w.word;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    ++out.words[w.layer];
    auto& h = hits[w.layer];
    for (const Lexicon& lex : lexicons) {
      h[lex.name] += lex.words.count(lower);
    }
  }
  for (const auto& [layer, n] : out.words) {
    auto& f = out.fraction[layer];
    for (const Lexicon& lex : lexicons) {
      f[lex.name] = static_cast<double>(hits[layer][lex.name]) / static_cast<double>(n);
    }
  }
  return out;
}

// ---- interpretability ----

InterpretabilityReport interpretability_rate(std::span<const LayerVerdict> verdicts) {
  struct Tally {
    std::uint64_t total = 0, yes = 0;
    std::uint64_t raw_c = 0, raw_a = 0, raw_g = 0;
    std::uint64_t ex_c = 0, ex_a = 0, ex_g = 0;
  };
  std::map<std::uint16_t, Tally> tallies;
  for (const LayerVerdict& lv : verdicts) {
    Tally& t = tallies[lv.layer];
    ++t.total;
    if (!lv.verdict.interpretable) continue;
    ++t.yes;
    const bool c = !lv.verdict.concrete_words.empty();
    const bool a = !lv.verdict.abstract_words.empty();
    const bool g = !lv.verdict.global_words.empty();
    t.raw_c += c;
    t.raw_a += a;
    t.raw_g += g;
    if (c) {
      ++t.ex_c;
    } else if (a) {
      ++t.ex_a;
    } else if (g) {
      ++t.ex_g;
    }
  }
  InterpretabilityReport report;
  for (const auto& [layer, t] : tallies) {
    LayerInterpretability li;
    li.total = t.total;
    li.interpretable = t.yes;
    li.fraction = static_cast<double>(t.yes) / static_cast<double>(t.total);
    if (t.yes > 0) {
      const double d = static_cast<double>(t.yes);
      li.raw = {t.raw_c / d, t.raw_a / d, t.raw_g / d};
      li.exclusive = {t.ex_c / d, t.ex_a / d, t.ex_g / d};
    }
    report.layers.emplace(layer, li);
  }
  return report;
}

double cohens_kappa(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kRejectedInput, "label sequences differ in length");
  if (a.empty()) throw Error(ErrorCode::kRejectedInput, "label sequences are empty");
  std::int64_t agree = 0, a_yes = 0, b_yes = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += a[i] == b[i];
    a_yes += a[i];
    b_yes += b[i];
  }
  const auto n = static_cast<std::int64_t>(a.size());
  // kappa = (p_o - p_e) / (1 - p_e), scaled by n^2 to stay in integers.
  const std::int64_t chance = a_yes * b_yes + (n - a_yes) * (n - b_yes);
  const std::int64_t denom = n * n - chance;
  if (denom == 0) return agree == n ? 1.0 : 0.0;
  return static_cast<double>(agree * n - chance) / static_cast<double>(denom);
}

}  // namespace latentlens::analysis
