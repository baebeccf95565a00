// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Usage: acceptance <path-to-latentlens-cli> [work-dir]

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "evolution_mocks.hpp"
#include "generators.hpp"
#include "latentlens/analysis.hpp"
#include "latentlens/corpus_index.hpp"
#include "latentlens/evolution.hpp"
#include "latentlens/judge.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/quantizer.hpp"
#include "latentlens/reservoir.hpp"
#include "latentlens/testkit.hpp"
#include "latentlens/vector_ops.hpp"
#include "latentlens/word_merge.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace latentlens;
using nlohmann::json;

extern char** environ;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(double x, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

// Counts bytes written without storing them.
class CountingBuf : public std::streambuf {
 public:
  std::uint64_t count = 0;

 protected:
  int_type overflow(int_type c) override {
    if (c != traits_type::eof()) ++count;
    return traits_type::not_eof(c);
  }
  std::streamsize xsputn(const char*, std::streamsize n) override {
    count += static_cast<std::uint64_t>(n);
    return n;
  }
};

io::PhraseRecord single_token_phrase(std::uint32_t id, std::uint32_t vocab) {
  io::PhraseRecord p;
  p.phrase_id = id;
  p.text = "w" + std::to_string(id);
  p.tokens = {{{0, static_cast<std::uint32_t>(p.text.size())}, vocab, 0}};
  return p;
}

io::VocabularyMatrix matrix_from(const std::vector<float>& rows, std::size_t d) {
  io::VocabularyMatrix m;
  m.dim = static_cast<std::uint32_t>(d);
  m.values = rows;
  for (std::size_t i = 0; i < rows.size() / d; ++i) m.tokens.push_back("t" + std::to_string(i));
  return m;
}

lens::LatentVector latent_of(std::vector<float> v, std::uint16_t layer = 0) {
  lens::LatentVector h;
  h.values = std::move(v);
  h.layer_id = layer;
  return h;
}

std::vector<std::uint64_t> vocab_ids(const std::vector<lens::Match>& ms) {
  std::vector<std::uint64_t> out;
  for (const auto& m : ms) out.push_back(m.vocab_token_id);
  return out;
}

// ---------------------------------------------------------------------------

Outcome reservoir_cap() {
  Outcome o;
  corpus::BuildOptions opts;
  opts.cap = 20;
  corpus::IndexBuilder b(opts);
  std::vector<io::PhraseRecord> phrases;
  for (std::uint32_t i = 0; i < 1000; ++i) {
    io::PhraseRecord p;
    p.phrase_id = i;
    p.text = "the clock " + std::to_string(i);
    p.tokens = {{{0, 3}, 5, 0}, {{3, 9}, 7, 0}, {{9, static_cast<std::uint32_t>(p.text.size())}, 9, 0}};
    phrases.push_back(std::move(p));
  }
  b.begin_stream({io::StreamKind::kReference, 4, "acc", {3}}, phrases);
  gen::Rng rng(1);
  for (std::uint32_t i = 0; i < 1000; ++i) b.add_record({i, 1, 7, 3, rng.gaussian(4)});
  const auto idx = b.finish();
  o.require(idx.entry_count() == 20, "stored " + std::to_string(idx.entry_count()) + " entries, want 20");

  const int trials = 20000;
  const std::uint32_t cap = 2, n = 10;
  std::vector<int> hits(n, 0);
  for (int s = 0; s < trials; ++s) {
    corpus::Reservoir r({static_cast<std::uint64_t>(s), 7, 3}, cap);
    for (std::uint32_t i = 0; i < n; ++i) {
      if (auto slot = r.admit()) r.set_slot(*slot, i);
    }
    for (auto item : r.slots()) ++hits[item];
  }
  double worst = 0.0;
  for (std::uint32_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(hits[i] / double(trials) - 0.2));
  o.require(worst <= 0.01, "inclusion frequency off by " + fmt(worst));
  if (o.pass) o.detail = "20 stored of 1000; max |freq - 0.2| = " + fmt(worst, 3);
  return o;
}

Outcome storage_ratio() {
  Outcome o;
  const std::size_t d = 4096, n = 100000, tokens = 5000;
  std::vector<io::PhraseRecord> phrases;
  for (std::uint32_t i = 0; i < n; ++i) phrases.push_back(single_token_phrase(i, i % tokens));
  const io::DumpHeader header{io::StreamKind::kReference, static_cast<std::uint32_t>(d), "acc", {8}};

  CountingBuf dump_buf;
  std::ostream dump_out(&dump_buf);
  io::DumpWriter writer(dump_out, header);
  corpus::BuildOptions opts;
  opts.cap = 20;
  corpus::IndexBuilder builder(opts);
  builder.begin_stream(header, phrases);

  std::uint64_t state = 0x9e3779b97f4a7c15ULL;
  io::ReferenceEmbeddingRecord rec;
  rec.layer_id = 8;
  rec.vector.resize(d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (float& x : rec.vector) {
      state = corpus::mix64(state);
      x = static_cast<float>(static_cast<std::int64_t>(state >> 40) - (1 << 23)) / float(1 << 23);
    }
    rec.phrase_id = i;
    rec.token_index = 0;
    rec.vocab_token_id = i % tokens;
    writer.write(rec);
    builder.add_record(rec);
  }
  for (auto& p : phrases) writer.add_phrase(p);
  writer.finish();
  const auto idx = builder.finish();
  o.require(idx.entry_count() == n, "index kept " + std::to_string(idx.entry_count()) + " of " + std::to_string(n));

  CountingBuf idx_buf;
  std::ostream idx_out(&idx_buf);
  corpus::save_index(idx, idx_out);
  const double float_bytes = double(n) * d * sizeof(float);
  const double vs_vectors = idx_buf.count / float_bytes;
  const double vs_dump = idx_buf.count / double(dump_buf.count);
  o.require(vs_vectors <= 0.265, "index is " + fmt(100 * vs_vectors, 4) + "% of the float32 vectors");
  o.detail = "index " + std::to_string(idx_buf.count) + " B = " + fmt(100 * vs_vectors, 4) + "% of float32 vectors, " +
             fmt(100 * vs_dump, 4) + "% of the whole dump file";
  return o;
}

Outcome cosine_fidelity() {
  Outcome o;
  const std::size_t d = 4096, pairs = 10000;
  gen::Rng rng(3);
  double worst_oracle = 0.0, worst_impl = 0.0, impl_vs_oracle = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto a = rng.unit(d);
    const auto b = rng.unit(d);
    const double exact = oracle::cosine(a, b);
    // Oracle first: quantize a with the reference quantizer and score.
    const auto qa = oracle::dequantize(oracle::quantize(a));
    long double acc = 0.0L;
    for (std::size_t i = 0; i < d; ++i) acc += qa[i] * static_cast<long double>(b[i]);
    const double oracle_q = static_cast<double>(acc);
    const double impl_q = score_quantized(quantize(a), b);
    worst_oracle = std::max(worst_oracle, std::fabs(oracle_q - exact));
    worst_impl = std::max(worst_impl, std::fabs(impl_q - exact));
    impl_vs_oracle = std::max(impl_vs_oracle, std::fabs(impl_q - oracle_q));
  }
  o.require(worst_oracle <= 0.02, "oracle quantized cosine error " + fmt(worst_oracle));
  o.require(worst_impl <= 0.02, "quantized cosine error " + fmt(worst_impl));
  o.require(impl_vs_oracle <= 1e-5, "implementation differs from oracle by " + fmt(impl_vs_oracle));
  if (o.pass) {
    o.detail = "max error " + fmt(worst_impl, 3) + " (oracle " + fmt(worst_oracle, 3) + ", agreement " +
               fmt(impl_vs_oracle, 2) + ")";
  }
  return o;
}

Outcome top_k_exactness() {
  Outcome o;
  const std::size_t d = 64, n = 10000;
  gen::Rng rng(4);
  // Every 97th row repeats an earlier one so exact ties occur.
  const auto rows = gen::gaussian_rows(rng, n, d, 97);
  const auto m = matrix_from(rows, d);
  const auto idx = gen::single_token_index(rows, d, {0});
  // The stored codes must be what an independent quantizer produces from the
  // normalized rows (differences only where v*127 lands on a half).
  std::size_t code_mismatch = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = idx.entry(corpus::make_reference_id(0, i));
    const std::vector<float> row(rows.begin() + i * d, rows.begin() + (i + 1) * d);
    const auto want = oracle::quantize(normalized(row));
    for (std::size_t j = 0; j < d; ++j) code_mismatch += std::abs(e.vector.codes[j] - want.codes[j]) > 1;
  }
  o.require(code_mismatch == 0, std::to_string(code_mismatch) + " stored codes far from the oracle");

  std::size_t swaps = 0, checks = 0;
  for (int q = 0; q < 100 && o.pass; ++q) {
    const auto h = rng.gaussian(d);
    const auto emb_all = oracle::embedding_scan(h, rows, d);
    const auto log_all = oracle::logit_scan(h, rows, d);
    const double hn = oracle::norm(h);
    std::vector<oracle::Scored> lat_all;
    for (std::size_t i = 0; i < n; ++i) {
      const auto e = idx.entry(corpus::make_reference_id(0, i));
      long double acc = 0.0L;
      for (std::size_t j = 0; j < d; ++j) {
        acc += static_cast<long double>(e.vector.codes[j]) * e.vector.scale / 127.0L * (h[j] / hn);
      }
      lat_all.push_back({static_cast<double>(acc), corpus::make_reference_id(0, i)});
    }
    for (std::size_t k : {1, 5, 50}) {
      const auto e = oracle::compare_ranking(vocab_ids(lens::embedding_lens(latent_of(h), m, k)), emb_all, k, 1e-6);
      const auto l = oracle::compare_ranking(vocab_ids(lens::logit_lens(latent_of(h), m, k)), log_all, k, 1e-5);
      std::vector<std::uint64_t> got;
      for (const auto& mm : lens::latent_lens(latent_of(h), idx, k)) got.push_back(mm.reference_id);
      const auto t = oracle::compare_ranking(got, lat_all, k, 1e-6);
      o.require(e.ok, "embedding q" + std::to_string(q) + " k" + std::to_string(k) + ": " + e.detail);
      o.require(l.ok, "logit q" + std::to_string(q) + " k" + std::to_string(k) + ": " + l.detail);
      o.require(t.ok, "latent q" + std::to_string(q) + " k" + std::to_string(k) + ": " + t.detail);
      swaps += e.near_tie_swaps + l.near_tie_swaps + t.near_tie_swaps;
      checks += 3;
    }
  }
  if (o.pass) o.detail = std::to_string(checks) + " rankings match; " + std::to_string(swaps) + " float-rounding near-tie swaps";
  return o;
}

Outcome lens_reduction() {
  Outcome o;
  const std::size_t d = 64, n = 1000;
  gen::Rng rng(5);
  const auto rows = gen::lattice_rows(rng, n, d);
  const auto m = matrix_from(rows, d);
  const auto idx = gen::single_token_index(rows, d, {0});
  for (int q = 0; q < 1000 && o.pass; ++q) {
    const auto h = latent_of(gen::lattice_query(rng, d));
    const auto a = vocab_ids(lens::latent_lens(h, idx, n));
    const auto b = vocab_ids(lens::embedding_lens(h, m, n));
    o.require(a == b, "query " + std::to_string(q) + " orders differ");
  }
  if (o.pass) o.detail = "1000 queries, full " + std::to_string(n) + "-row orderings identical";
  return o;
}

Outcome planted_alignment(const fs::path& work) {
  Outcome o;
  const auto run = [&](const testkit::PlantedSpec& spec, const std::string& name) {
    const auto fx = testkit::generate_planted_corpus(spec);
    const auto paths = testkit::write_planted_fixture(fx, spec, work / name);
    const std::vector<fs::path> refs{paths.references};
    const auto idx = corpus::build_index(refs, {});
    auto reader = io::DumpReader::open(paths.latents);
    return analysis::layer_alignment(reader, idx, 5);
  };
  const std::vector<std::uint16_t> layers{0, 2, 4, 8, 12};
  const auto diag = run(testkit::diagonal_spec(layers, 4, 5, 64, 6), "diagonal");
  o.require(diag.query_layers == layers && diag.source_layers == layers, "unexpected matrix axes");
  for (std::size_t r = 0; r < diag.query_layers.size() && o.pass; ++r) {
    const auto f = diag.row_fractions(r);
    for (std::size_t c = 0; c < f.size(); ++c) {
      o.require(f[c] == (r == c ? 1.0 : 0.0), "diagonal row " + std::to_string(r) + " col " + std::to_string(c) +
                                                  " = " + fmt(f[c]));
    }
  }
  const auto leap = run(testkit::leap_spec(layers, 8, 4, 5, 64, 6), "leap");
  const auto col8 = std::find(leap.source_layers.begin(), leap.source_layers.end(), 8) - leap.source_layers.begin();
  const double mass = leap.row_fractions(0).at(static_cast<std::size_t>(col8));
  o.require(mass >= 0.95, "leap row 0 puts " + fmt(mass) + " at layer 8");
  if (o.pass) o.detail = "identity " + std::to_string(layers.size()) + "x" + std::to_string(layers.size()) +
                         "; leap row 0 mass at layer 8 = " + fmt(mass);
  return o;
}

std::vector<bool> labels(int yy, int yn, int ny, int nn, bool first) {
  std::vector<bool> out;
  const auto add = [&](int n, bool a, bool b) {
    for (int i = 0; i < n; ++i) out.push_back(first ? a : b);
  };
  add(yy, true, true);
  add(yn, true, false);
  add(ny, false, true);
  add(nn, false, false);
  return out;
}

Outcome kappa() {
  Outcome o;
  const double hand = analysis::cohens_kappa(labels(20, 5, 10, 15, true), labels(20, 5, 10, 15, false));
  const std::vector<bool> x{true, false, true, true, false, false, true};
  std::vector<bool> bal, comp;
  for (int i = 0; i < 50; ++i) {
    bal.push_back(i % 2 == 0);
    comp.push_back(i % 2 != 0);
  }
  const double same = analysis::cohens_kappa(x, x);
  const double opposite = analysis::cohens_kappa(bal, comp);
  o.require(hand == 0.4, "hand fixture gives " + fmt(hand, 17));
  o.require(same == 1.0, "identical labels give " + fmt(same, 17));
  o.require(opposite == -1.0, "complementary labels give " + fmt(opposite, 17));
  if (o.pass) o.detail = "0.4 / 1 / -1 exactly";
  return o;
}

lens::Match match_of(std::uint32_t token, std::uint32_t phrase) {
  lens::Match m;
  m.vocab_token_id = token;
  m.phrase_id = phrase;
  return m;
}

Outcome aggregates() {
  Outcome o;
  gen::Rng rng(8);
  const std::size_t items = 10000;

  // Drift.
  std::vector<analysis::TokenState> states;
  std::vector<oracle::DriftState> ostates;
  for (std::size_t tok = 0; states.size() < items; ++tok) {
    const auto mod = tok % 3 == 0 ? lens::Modality::kText : lens::Modality::kVisual;
    for (std::uint16_t l : {0, 1, 4, 9, 16}) {
      if (l != 0 && rng.coin(0.25)) continue;
      const auto v = rng.gaussian(16);
      states.push_back({"k" + std::to_string(tok), mod, l, v});
      ostates.push_back({"k" + std::to_string(tok), static_cast<int>(mod), l, v});
    }
  }
  const auto drift = analysis::token_drift(states);
  for (const auto& [key, mean] : oracle::drift(ostates)) {
    const double got = drift.mean_cosine.at(static_cast<lens::Modality>(key.first)).at(key.second);
    o.require(std::fabs(got - mean) <= 1e-6, "drift mean differs at layer " + std::to_string(key.second));
  }

  // Norms.
  std::vector<analysis::NormSample> norms;
  for (std::size_t i = 0; i < items; ++i) {
    const auto mod = rng.coin() ? lens::Modality::kVisual : lens::Modality::kText;
    const float x = i % 101 == 0 ? 0.0f : static_cast<float>(std::exp(rng.uniform(-2, 7)));
    norms.push_back({mod, static_cast<std::uint16_t>(rng.integer(0, 4)), x});
  }
  const auto ns = analysis::norm_stats(norms);
  std::uint64_t norm_total = 0;
  for (const auto& [key, g] : ns.groups) {
    std::vector<double> xs;
    for (const auto& s : norms) {
      if (s.modality == key.first && s.layer == key.second) xs.push_back(s.norm);
    }
    std::vector<std::uint64_t> want(g.histogram.counts.size(), 0);
    for (double x : xs) ++want[oracle::bin_of(g.histogram.edges, x).value_or(0)];
    o.require(g.histogram.counts == want, "norm histogram counts differ");
    o.require(g.p99 == oracle::percentile_nearest_rank(xs, 99), "p99 differs");
    o.require(g.max == *std::max_element(xs.begin(), xs.end()), "max differs");
    norm_total += g.histogram.total();
  }
  o.require(norm_total == items, "norm histograms hold " + std::to_string(norm_total) + " samples");

  // Similarity histogram, exact edges included.
  std::vector<float> scores;
  std::vector<double> sd;
  for (std::size_t i = 0; i < items; ++i) {
    const float x = i % 10 == 0 ? static_cast<float>(rng.integer(-50, 50)) / 50.0f : static_cast<float>(rng.uniform(-1, 1));
    scores.push_back(x);
    sd.push_back(x);
  }
  std::vector<double> edges;
  for (int i = 0; i <= 100; ++i) edges.push_back((i - 50) / 50.0);
  o.require(analysis::similarity_histogram(scores).counts == oracle::histogram(edges, sd), "similarity histogram differs");

  // Overlap.
  std::vector<analysis::QueryMatches> ra, rb;
  std::vector<std::vector<std::uint64_t>> ta, tb, pa, pb;
  for (std::size_t q = 0; q < items / 5; ++q) {
    ra.push_back({"q" + std::to_string(q), {}});
    rb.push_back({"q" + std::to_string(q), {}});
    ta.emplace_back();
    tb.emplace_back();
    pa.emplace_back();
    pb.emplace_back();
    for (int i = 0; i < 5; ++i) {
      const auto t1 = static_cast<std::uint32_t>(rng.integer(0, 15)), p1 = static_cast<std::uint32_t>(rng.integer(0, 40));
      const auto t2 = static_cast<std::uint32_t>(rng.integer(0, 15)), p2 = static_cast<std::uint32_t>(rng.integer(0, 40));
      ra.back().matches.push_back(match_of(t1, p1));
      rb.back().matches.push_back(match_of(t2, p2));
      ta.back().push_back(t1);
      pa.back().push_back(p1);
      tb.back().push_back(t2);
      pb.back().push_back(p2);
    }
  }
  const auto ov = analysis::nn_overlap(ra, rb);
  o.require(std::fabs(ov.token_overlap - oracle::mean_intersection(ta, tb)) <= 1e-6, "token overlap differs");
  o.require(std::fabs(ov.phrase_overlap - oracle::mean_intersection(pa, pb)) <= 1e-6, "phrase overlap differs");
  // Disjoint runs.
  std::vector<analysis::QueryMatches> da, db;
  for (std::uint32_t q = 0; q < 100; ++q) {
    da.push_back({"q" + std::to_string(q), {}});
    db.push_back({"q" + std::to_string(q), {}});
    for (std::uint32_t i = 0; i < 5; ++i) {
      da.back().matches.push_back(match_of(i, q * 10 + i));
      db.back().matches.push_back(match_of(100 + i, 5000 + q * 10 + i));
    }
  }
  const auto dj = analysis::nn_overlap(da, db);
  o.require(dj.token_overlap == 0.0 && dj.phrase_overlap == 0.0,
            "disjoint runs give " + fmt(dj.token_overlap) + "/" + fmt(dj.phrase_overlap));

  // Attributes.
  const std::vector<analysis::Lexicon> lex{{"color", {"red", "blue", "green"}}, {"shape", {"round", "square"}}};
  const std::vector<std::string> pool{"Red", "blue", "GREEN", "round", "Square", "cat", "tower", "clock", "sky"};
  std::vector<analysis::LayerWord> words;
  std::map<std::uint16_t, std::map<std::string, std::uint64_t>> hits;
  std::map<std::uint16_t, std::uint64_t> totals;
  for (std::size_t i = 0; i < items; ++i) {
    const auto layer = static_cast<std::uint16_t>(rng.integer(0, 5) * 4);
    const auto& w = pool[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pool.size()) - 1))];
    words.push_back({layer, w});
    std::string lower;
    for (char c : w) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    ++totals[layer];
    for (const auto& l : lex) hits[layer][l.name] += l.words.count(lower);
  }
  const auto attr = analysis::attribute_counts(words, lex);
  for (const auto& [layer, total] : totals) {
    o.require(attr.words.at(layer) == total, "attribute word count differs");
    for (const auto& l : lex) {
      const double want = double(hits[layer][l.name]) / double(total);
      o.require(std::fabs(attr.fraction.at(layer).at(l.name) - want) <= 1e-6, "attribute fraction differs");
    }
  }
  if (o.pass) o.detail = "drift, norms, similarity, overlap, attributes on 10000 items; disjoint overlap 0/0";
  return o;
}

Outcome word_merge() {
  Outcome o;
  const std::vector<io::TokenSpan> toks{{{0, 1}, 0, 0}, {{1, 4}, 1, 0}, {{4, 6}, 2, 0}, {{6, 12}, 3, 0}};
  for (std::size_t t = 0; t < 3; ++t) {
    const auto w = lens::merge_to_full_word("belfry tower", toks, t);
    o.require(w.word == "belfry" && w.span == io::ByteSpan{0, 6}, "belfry case gives '" + w.word + "'");
  }
  gen::Rng rng(9);
  std::size_t checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = gen::tokenized_phrase(rng);
    for (std::size_t t = 0; t < p.tokens.size(); ++t) {
      const auto span = p.tokens[t].bytes;
      std::size_t first = span.begin;
      while (first < span.end && lens::is_word_separator(static_cast<unsigned char>(p.text[first]))) ++first;
      if (first == span.end) continue;
      const auto want = oracle::regex_word_at(p.text, first);
      const auto got = lens::merge_to_full_word(p.text, p.tokens, t);
      o.require(want && got.span.begin == want->first && got.span.end == want->second,
                "phrase '" + p.text + "' token " + std::to_string(t));
      ++checked;
    }
  }
  if (o.pass) o.detail = "b+elf+ry -> belfry; " + std::to_string(checked) + " tokens agree with the regex oracle";
  return o;
}

Outcome evolution_check() {
  Outcome o;
  gen::Rng rng(10);
  lens::LatentVector h = latent_of(rng.gaussian(64), 8);
  evolution::CandidatePhrase s1, s2;
  s1.text = "a clocks";
  s2.text = "tower clocks";
  s1.target_token = s2.target_token = "clocks";
  const std::vector<evolution::CandidatePhrase> seeds{s1, s2};
  const evolution::EvolutionConfig cfg;  // 6 rounds, 20 variations, keep 5
  std::string summary;
  {
    mocks::PlantedEmbedder emb(h.values);
    mocks::PrefixMutator mut;
    const auto run = evolution::evolve(h, seeds, mut, emb, cfg);
    o.require(run.rounds.size() == 6, "ran " + std::to_string(run.rounds.size()) + " rounds");
    float prev = run.initial_best();
    for (const auto& r : run.rounds) {
      o.require(r.best_score >= prev, "best score fell in round " + std::to_string(r.round));
      prev = r.best_score;
    }
    o.require(std::fabs(run.final_best() - 0.9f) <= 1e-5f, "final best " + fmt(run.final_best()));
    summary = "best " + fmt(run.initial_best(), 3) + " -> " + fmt(run.final_best(), 3) + " nondecreasing; ";
  }
  {
    mocks::PlantedEmbedder emb(h.values);
    mocks::ConstraintBreaker breaker;
    const auto run = evolution::evolve(h, seeds, breaker, emb, cfg);
    std::size_t generated = 0, rejected = 0;
    for (const auto& r : run.rounds) {
      generated += r.generated;
      rejected += r.rejected;
    }
    o.require(generated > 0 && rejected == generated, std::to_string(rejected) + "/" + std::to_string(generated) +
                                                          " violating variants rejected");
    o.require(run.pool.size() == 2, "violating variants reached the pool");
    summary += std::to_string(rejected) + "/" + std::to_string(generated) + " violations rejected; ";
  }
  const auto imp = evolution::improvement_report(0.415, 0.463);
  o.require(imp.delta == 0.048, "delta " + fmt(imp.delta, 17));
  if (o.pass) o.detail = summary + "delta " + fmt(imp.delta);
  return o;
}

class ScriptedTransport : public judge::Transport {
 public:
  explicit ScriptedTransport(std::deque<judge::TransportResponse> steps) : steps_(std::move(steps)) {}
  judge::TransportResponse post(const std::string&, const std::string&) override {
    if (steps_.empty()) return {500, "script exhausted"};
    auto s = steps_.front();
    steps_.pop_front();
    return s;
  }

 private:
  std::deque<judge::TransportResponse> steps_;
};

Outcome judge_client() {
  Outcome o;
  const std::string body = judge::request_body(testkit::golden_request(), "gpt-5");
  o.require(judge::sha256_hex(body) == "64158b583ecefe64872d00bc2c0fa3a8e2dac44db39a3f8675bfedd26af888a7",
            "golden request bytes changed");
  const std::vector<std::string> cands{"clocks", "tower", "brick", "sky", "pigeon"};
  const auto g = testkit::judge_goldens();
  for (const std::string& b : {g.well_formed, g.fenced, g.chat_wrapped}) {
    const auto p = judge::parse_verdict(b, cands);
    o.require(p.verdict.interpretable && p.verdict.concrete_words == std::vector<std::string>{"clocks"},
              "accepted shape parsed wrongly");
  }
  for (const std::string& b : {g.no_json, g.missing_key, g.type_error, g.empty_interpretable}) {
    bool rejected = false;
    try {
      judge::parse_verdict(b, cands);
    } catch (const judge::ParseError&) {
      rejected = true;
    }
    o.require(rejected, "malformed response accepted");
  }
  ScriptedTransport t({{503, "busy"}, {500, "oops"}, {200, g.chat_wrapped}});
  judge::JudgeConfig cfg;
  cfg.sleep = [](std::chrono::milliseconds) {};
  const std::vector<judge::JudgeRequest> reqs{testkit::golden_request()};
  const auto r = judge::run_judgments(reqs, cfg, t);
  o.require(r.verdicts.size() == 1 && r.retries.size() == 2 && r.failures.empty(),
            std::to_string(r.verdicts.size()) + " verdicts, " + std::to_string(r.retries.size()) + " retries");
  if (o.pass) o.detail = "golden sha stable; 3 shapes accepted, 4 rejected; fail/fail/succeed -> 1 verdict, 2 retries";
  return o;
}

int spawn(const std::vector<std::string>& args, pid_t* pid_out, bool quiet) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  if (quiet) {
    posix_spawn_file_actions_addopen(&fa, 1, "/dev/null", O_WRONLY, 0);
    posix_spawn_file_actions_addopen(&fa, 2, "/dev/null", O_WRONLY, 0);
  }
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) return -1;
  if (pid_out) {
    *pid_out = pid;
    return 0;
  }
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end(const std::string& cli, const fs::path& work) {
  Outcome o;
  const fs::path dir = work / "e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  int rc = spawn({cli, "gen-fixture", "--preset", "diagonal", "--out", (dir / "fx").string()}, nullptr, true);
  o.require(rc == 0, "gen-fixture exited " + std::to_string(rc));
  rc = spawn({cli, "build-index", "--refs", (dir / "fx" / "refs.llns-ref").string(), "--out", (dir / "idx.llns-idx").string()},
             nullptr, true);
  o.require(rc == 0, "build-index exited " + std::to_string(rc));
  if (!o.pass) return o;

  pid_t server = 0;
  const fs::path port_file = dir / "port";
  if (spawn({cli, "serve", "--index", (dir / "idx.llns-idx").string(), "--latents", (dir / "fx" / "latents.llns-lat").string(),
             "--port", "0", "--port-file", port_file.string()},
            &server, true) != 0) {
    o.require(false, "could not start the server");
    return o;
  }
  int port = 0;
  for (int i = 0; i < 150 && port == 0; ++i) {
    std::ifstream in(port_file);
    if (!(in >> port)) {
      port = 0;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
  o.require(port > 0, "server never wrote its port");
  if (port > 0) {
    const auto manifest = json::parse(gen::slurp(dir / "fx" / "manifest.json"));
    judge::JudgeConfig hc;
    hc.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/lens/query";
    hc.timeout = std::chrono::seconds(5);
    const auto http = judge::make_http_transport(hc);
    std::size_t checked = 0;
    for (const auto& q : manifest["queries"]) {
      const json req{{"image_id", q["image_id"]}, {"row", q["row"]}, {"col", q["col"]}, {"layer", q["layer"]},
                     {"method", "latent"}, {"k", 5}};
      judge::TransportResponse res;
      try {
        res = http->post(req.dump(), "");
      } catch (const std::exception& e) {
        o.require(false, e.what());
        break;
      }
      o.require(res.status == 200, "HTTP " + std::to_string(res.status) + ": " + res.body);
      if (res.status != 200) break;
      const auto top = json::parse(res.body)["matches"].at(0);
      const auto& want = q["expected"].at(0);
      o.require(top["phrase_id"] == want["phrase_id"] && top["token_index"] == want["token_index"] &&
                    top["source_layer"] == want["source_layer"],
                "top match " + top.dump() + " is not the planted " + want.dump());
      ++checked;
    }
    if (o.pass) o.detail = std::to_string(checked) + " queries return their planted match over HTTP";
  }
  kill(server, SIGTERM);
  int status = 0;
  waitpid(server, &status, 0);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <latentlens-cli> [work-dir]\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "latentlens-acceptance";
  fs::create_directories(work);

  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "reservoir cap", 10, reservoir_cap},
      {2, "storage ratio", 60, storage_ratio},
      {3, "quantized cosine fidelity", 30, cosine_fidelity},
      {4, "top-k exactness", 30, top_k_exactness},
      {5, "lens reduction", 0, lens_reduction},
      {6, "planted alignment", 0, [&] { return planted_alignment(work); }},
      {7, "kappa", 0, kappa},
      {8, "aggregates", 0, aggregates},
      {9, "full-word merge", 0, word_merge},
      {10, "evolution", 0, evolution_check},
      {11, "judge client", 0, judge_client},
      {12, "end-to-end", 20, [&] { return end_to_end(cli, work); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += " (over the " + fmt(c.limit_s) + " s limit)";
    }
    failed += !o.pass;
    std::printf("%s %2d %-26s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
