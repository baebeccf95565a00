#include "latentlens/testkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "latentlens/error.hpp"
#include "latentlens/reservoir.hpp"
#include "latentlens/vector_ops.hpp"

namespace latentlens::testkit {

using nlohmann::json;

namespace {

// Counter-based generator so fixtures do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(corpus::mix64(seed ^ 0x6c6c6e73ULL)) {}

  std::uint64_t next() { return corpus::mix64(state_ += 0x9e3779b97f4a7c15ULL); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::vector<double> unit(std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    do {
      n = 0.0;
      for (double& x : v) {
        x = normal();
        n += x * x;
      }
    } while (n == 0.0);
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  }

 private:
  std::uint64_t state_;
};

double ddot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Unit vector orthogonal to unit q.
std::vector<double> orthogonal_unit(Rng& rng, const std::vector<double>& q) {
  while (true) {
    std::vector<double> u = rng.unit(q.size());
    const double p = ddot(u, q);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= p * q[i];
    const double n = std::sqrt(ddot(u, u));
    if (n < 1e-6) continue;
    for (double& x : u) x /= n;
    return u;
  }
}

std::vector<float> to_float(const std::vector<double>& v, double scale = 1.0) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * scale);
  return out;
}

void validate(const PlantedSpec& spec) {
  if (spec.dim < 2) throw Error(ErrorCode::kConfiguration, "planted spec needs dim >= 2");
  if (spec.layers.empty()) throw Error(ErrorCode::kConfiguration, "planted spec needs at least one layer");
  if (!std::is_sorted(spec.layers.begin(), spec.layers.end()) ||
      std::adjacent_find(spec.layers.begin(), spec.layers.end()) != spec.layers.end()) {
    throw Error(ErrorCode::kConfiguration, "planted spec layers must be strictly increasing");
  }
  if (!(spec.margin > 0.0)) throw Error(ErrorCode::kConfiguration, "margin must be positive");
  for (const PlantedQuery& q : spec.queries) {
    if (q.matches.empty()) throw Error(ErrorCode::kConfiguration, "every planted query needs a match");
    for (const PlantedMatch& m : q.matches) {
      if (!(m.cosine > 0.0 && m.cosine <= 1.0)) {
        throw Error(ErrorCode::kConfiguration, "target cosine must lie in (0, 1]");
      }
      if (!std::binary_search(spec.layers.begin(), spec.layers.end(), m.layer)) {
        throw Error(ErrorCode::kConfiguration, "planted layer " + std::to_string(m.layer) + " not in spec layers");
      }
    }
  }
}

}  // namespace

std::string pseudo_word(std::uint64_t n) {
  static constexpr const char* kSyllables[] = {"ka", "lo", "mi", "re", "su", "ta", "no", "vi", "pe", "du",
                                               "ro", "fa", "ne", "zu", "bi", "go", "la", "te", "ki", "mo"};
  constexpr std::uint64_t kBase = std::size(kSyllables);
  std::string out;
  do {
    out += kSyllables[n % kBase];
    n /= kBase;
  } while (n > 0);
  if (out.size() < 4) out += "ra";
  return out;
}

json to_json(const PlantedSpec& spec) {
  json queries = json::array();
  for (const auto& q : spec.queries) {
    json matches = json::array();
    for (const auto& m : q.matches) matches.push_back({{"layer", m.layer}, {"cosine", m.cosine}});
    queries.push_back(
        {{"image_id", q.image_id}, {"row", q.row}, {"col", q.col}, {"layer", q.layer}, {"matches", matches}});
  }
  return {{"dim", spec.dim},
          {"model_tag", spec.model_tag},
          {"layers", spec.layers},
          {"distractors_per_layer", spec.distractors_per_layer},
          {"seed", spec.seed},
          {"margin", spec.margin},
          {"max_attempts", spec.max_attempts},
          {"queries", queries}};
}

PlantedSpec spec_from_json(const json& j) {
  try {
    PlantedSpec s;
    s.dim = j.at("dim").get<std::uint32_t>();
    s.model_tag = j.value("model_tag", s.model_tag);
    s.layers = j.at("layers").get<std::vector<std::uint16_t>>();
    s.distractors_per_layer = j.value("distractors_per_layer", s.distractors_per_layer);
    s.seed = j.value("seed", s.seed);
    s.margin = j.value("margin", s.margin);
    s.max_attempts = j.value("max_attempts", s.max_attempts);
    for (const json& q : j.at("queries")) {
      PlantedQuery pq;
      pq.image_id = q.at("image_id").get<std::uint32_t>();
      pq.row = q.value("row", std::uint16_t{0});
      pq.col = q.value("col", std::uint16_t{0});
      pq.layer = q.at("layer").get<std::uint16_t>();
      for (const json& m : q.at("matches")) {
        pq.matches.push_back({m.at("layer").get<std::uint16_t>(), m.at("cosine").get<double>()});
      }
      s.queries.push_back(std::move(pq));
    }
    validate(s);
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfiguration, std::string("bad planted spec: ") + e.what());
  }
}

namespace {

std::vector<PlantedMatch> ladder(std::uint16_t layer, std::uint32_t n) {
  std::vector<PlantedMatch> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back({layer, 0.9 - 0.02 * i});
  return out;
}

PlantedSpec base_spec(std::vector<std::uint16_t> layers, std::uint32_t dim, std::uint64_t seed) {
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  PlantedSpec s;
  s.dim = dim;
  s.layers = std::move(layers);
  s.seed = seed;
  return s;
}

}  // namespace

PlantedSpec diagonal_spec(std::vector<std::uint16_t> layers, std::uint32_t queries_per_layer, std::uint32_t per_query,
                          std::uint32_t dim, std::uint64_t seed) {
  PlantedSpec s = base_spec(std::move(layers), dim, seed);
  for (std::uint16_t layer : s.layers) {
    for (std::uint32_t i = 0; i < queries_per_layer; ++i) {
      s.queries.push_back({0, static_cast<std::uint16_t>(i / 4), static_cast<std::uint16_t>(i % 4), layer,
                           ladder(layer, per_query)});
    }
  }
  return s;
}

PlantedSpec leap_spec(std::vector<std::uint16_t> layers, std::uint16_t leap_layer, std::uint32_t queries_per_layer,
                      std::uint32_t per_query, std::uint32_t dim, std::uint64_t seed) {
  layers.push_back(0);
  layers.push_back(leap_layer);
  PlantedSpec s = diagonal_spec(std::move(layers), queries_per_layer, per_query, dim, seed);
  for (PlantedQuery& q : s.queries) {
    if (q.layer == 0) q.matches = ladder(leap_layer, per_query);
  }
  return s;
}

PlantedCorpus generate_planted_corpus(const PlantedSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const std::size_t d = spec.dim;

  struct Ref {
    std::vector<double> v;
    std::uint16_t layer;
    std::optional<std::size_t> owner;  // planted for this query
  };
  std::vector<std::vector<double>> queries;
  std::vector<double> threshold;
  std::vector<Ref> refs;

  const auto ok_against_queries = [&](const std::vector<double>& r, std::optional<std::size_t> owner) {
    for (std::size_t k = 0; k < queries.size(); ++k) {
      if (owner && *owner == k) continue;
      if (static_cast<double>(cosine(to_float(r), to_float(queries[k]))) > threshold[k]) return false;
    }
    return true;
  };
  const auto infeasible = [&](const std::string& what) {
    throw Error(ErrorCode::kInfeasible, what + " violates the " + std::to_string(spec.margin) + " margin after " +
                                            std::to_string(spec.max_attempts) + " attempts");
  };

  for (std::size_t qi = 0; qi < spec.queries.size(); ++qi) {
    const PlantedQuery& pq = spec.queries[qi];
    double weakest = 1.0;
    for (const auto& m : pq.matches) weakest = std::min(weakest, m.cosine);
    const double thr = weakest - spec.margin;

    std::vector<double> q;
    for (std::uint32_t attempt = 0;; ++attempt) {
      if (attempt == spec.max_attempts) infeasible("query " + std::to_string(qi));
      q = rng.unit(d);
      bool ok = true;
      for (const Ref& r : refs) {
        if (static_cast<double>(cosine(to_float(q), to_float(r.v))) > thr) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    queries.push_back(q);
    threshold.push_back(thr);

    for (const auto& m : pq.matches) {
      std::vector<double> r(d);
      for (std::uint32_t attempt = 0;; ++attempt) {
        if (attempt == spec.max_attempts) infeasible("planted match of query " + std::to_string(qi));
        const std::vector<double> u = orthogonal_unit(rng, q);
        const double s = std::sqrt(std::max(0.0, 1.0 - m.cosine * m.cosine));
        for (std::size_t i = 0; i < d; ++i) r[i] = m.cosine * q[i] + s * u[i];
        if (ok_against_queries(r, qi)) break;
      }
      refs.push_back({r, m.layer, qi});
    }
  }
  for (std::uint16_t layer : spec.layers) {
    for (std::uint32_t i = 0; i < spec.distractors_per_layer; ++i) {
      for (std::uint32_t attempt = 0;; ++attempt) {
        if (attempt == spec.max_attempts) infeasible("distractor " + std::to_string(i) + " at layer " + std::to_string(layer));
        std::vector<double> r = rng.unit(d);
        if (ok_against_queries(r, std::nullopt)) {
          refs.push_back({std::move(r), layer, std::nullopt});
          break;
        }
      }
    }
  }

  PlantedCorpus out;
  out.ref_header = {io::StreamKind::kReference, spec.dim, spec.model_tag, spec.layers};
  std::set<std::uint16_t> qlayers;
  for (const auto& q : spec.queries) qlayers.insert(q.layer);
  out.latent_header = {io::StreamKind::kVisualLatent, spec.dim, spec.model_tag, {qlayers.begin(), qlayers.end()}};

  // Phrase p is "a <head><tail>" with tokens "a", head, tail; the stored
  // vector belongs to the tail token so lookups exercise word merging.
  out.vocabulary.role = io::MatrixRole::kEmbedding;
  out.vocabulary.dim = spec.dim;
  out.vocabulary.model_tag = spec.model_tag;
  out.vocabulary.tokens.push_back("a");
  {
    const auto v = to_float(rng.unit(d));
    out.vocabulary.values.insert(out.vocabulary.values.end(), v.begin(), v.end());
  }
  for (std::size_t p = 0; p < refs.size(); ++p) {
    const std::string head = pseudo_word(p);
    const std::string tail = pseudo_word(p * 7 + 3).substr(0, 4);
    io::PhraseRecord ph;
    ph.phrase_id = static_cast<std::uint32_t>(p);
    ph.text = "a " + head + tail;
    const auto h0 = static_cast<std::uint32_t>(2);
    const auto h1 = static_cast<std::uint32_t>(2 + head.size());
    const auto t1 = static_cast<std::uint32_t>(ph.text.size());
    const auto head_id = static_cast<std::uint32_t>(1 + 2 * p);
    const auto tail_id = head_id + 1;
    ph.tokens = {{{0, 1}, 0, 0}, {{h0, h1}, head_id, 0}, {{h1, t1}, tail_id, 0}};
    out.phrases.push_back(ph);

    const auto head_vec = to_float(rng.unit(d));
    const auto tail_vec = to_float(refs[p].v);
    out.vocabulary.tokens.push_back(head);
    out.vocabulary.values.insert(out.vocabulary.values.end(), head_vec.begin(), head_vec.end());
    out.vocabulary.tokens.push_back(tail);
    out.vocabulary.values.insert(out.vocabulary.values.end(), tail_vec.begin(), tail_vec.end());
  }

  // Records grouped by layer, phrase order within a layer; vectors get an
  // arbitrary norm since the index normalizes.
  std::vector<std::size_t> order(refs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return refs[a].layer < refs[b].layer; });
  for (std::size_t p : order) {
    io::ReferenceEmbeddingRecord r;
    r.phrase_id = static_cast<std::uint32_t>(p);
    r.token_index = 2;
    r.vocab_token_id = out.phrases[p].tokens[2].vocab_token_id;
    r.layer_id = refs[p].layer;
    r.vector = to_float(refs[p].v, 1.0 + 4.0 * rng.uniform());
    out.references.push_back(std::move(r));
  }

  std::size_t next_planted = 0;
  for (std::size_t qi = 0; qi < spec.queries.size(); ++qi) {
    const PlantedQuery& pq = spec.queries[qi];
    io::VisualLatentRecord lat;
    lat.image_id = pq.image_id;
    lat.patch_row = pq.row;
    lat.patch_col = pq.col;
    lat.layer_id = pq.layer;
    lat.vector = to_float(queries[qi], 20.0 + 30.0 * rng.uniform());
    lat.raw_l2_norm = l2_norm(lat.vector);
    out.latents.push_back(std::move(lat));

    GroundTruth gt;
    gt.query = pq;
    for (std::size_t j = 0; j < pq.matches.size(); ++j, ++next_planted) {
      const std::size_t p = next_planted;
      const io::PhraseRecord& ph = out.phrases[p];
      gt.expected.push_back({static_cast<std::uint32_t>(p), ph.text, 2, ph.tokens[2].vocab_token_id, refs[p].layer,
                             pq.matches[j].cosine, ph.text.substr(2)});
    }
    std::stable_sort(gt.expected.begin(), gt.expected.end(), [](const ExpectedMatch& a, const ExpectedMatch& b) {
      if (a.cosine != b.cosine) return a.cosine > b.cosine;
      if (a.source_layer != b.source_layer) return a.source_layer < b.source_layer;
      return a.phrase_id < b.phrase_id;
    });
    out.truth.push_back(std::move(gt));
  }
  return out;
}

json manifest_json(const PlantedCorpus& corpus, const PlantedSpec& spec) {
  json queries = json::array();
  for (const auto& gt : corpus.truth) {
    json expected = json::array();
    for (const auto& e : gt.expected) {
      expected.push_back({{"phrase_id", e.phrase_id},
                          {"phrase_text", e.phrase_text},
                          {"token_index", e.token_index},
                          {"vocab_token_id", e.vocab_token_id},
                          {"source_layer", e.source_layer},
                          {"cosine", e.cosine},
                          {"full_word", e.full_word}});
    }
    queries.push_back({{"image_id", gt.query.image_id},
                       {"row", gt.query.row},
                       {"col", gt.query.col},
                       {"layer", gt.query.layer},
                       {"expected", expected}});
  }
  return {{"spec", to_json(spec)}, {"queries", queries}};
}

FixturePaths write_planted_fixture(const PlantedCorpus& corpus, const PlantedSpec& spec,
                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  FixturePaths paths{dir / "refs.llns-ref", dir / "latents.llns-lat", dir / "manifest.json",
                     dir / "vocab-emb.llns-vocab", dir / "vocab-unemb.llns-vocab"};
  {
    std::ofstream out(paths.references, std::ios::binary | std::ios::trunc);
    io::DumpWriter w(out, corpus.ref_header);
    for (const auto& r : corpus.references) w.write(r);
    for (const auto& p : corpus.phrases) w.add_phrase(p);
    w.finish();
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + paths.references.string());
  }
  {
    std::ofstream out(paths.latents, std::ios::binary | std::ios::trunc);
    io::DumpWriter w(out, corpus.latent_header);
    for (const auto& l : corpus.latents) w.write(l);
    w.finish();
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + paths.latents.string());
  }
  io::write_vocabulary(paths.embedding, corpus.vocabulary);
  io::VocabularyMatrix unemb = corpus.vocabulary;
  unemb.role = io::MatrixRole::kUnembedding;
  io::write_vocabulary(paths.unembedding, unemb);
  std::ofstream(paths.manifest) << manifest_json(corpus, spec).dump(2) << '\n';
  return paths;
}

void write_constant_latents(const std::filesystem::path& path, std::uint32_t dim, std::vector<std::uint16_t> layers,
                            std::uint32_t images, std::uint16_t grid) {
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  io::DumpWriter w(out, {io::StreamKind::kVisualLatent, dim, "constant", layers});
  Rng rng(dim * 31 + images);
  for (std::uint32_t img = 0; img < images; ++img) {
    for (std::uint16_t r = 0; r < grid; ++r) {
      for (std::uint16_t c = 0; c < grid; ++c) {
        const auto v = to_float(rng.unit(dim), 10.0);
        for (std::uint16_t layer : layers) {
          io::VisualLatentRecord rec{img, r, c, layer, v, l2_norm(v)};
          w.write(rec);
        }
      }
    }
  }
  w.finish();
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

judge::JudgeRequest golden_request() {
  // Eight-byte stand-ins; the transport never decodes them.
  judge::ImageBlob full{"image/png", std::string("\x89PNG\r\n\x1a\n", 8)};
  judge::ImageBlob crop{"image/png", std::string("\x89PNG\r\n\x1a\x00", 8)};
  return judge::build_request(std::move(full), std::move(crop), {"clocks", "tower", "brick", "sky", "pigeon"});
}

JudgeGoldens judge_goldens() {
  const std::string obj =
      R"({"reasoning": "Clock faces fill the region.", "interpretable": true, "concrete_words": ["clocks"], "abstract_words": [], "global_words": []})";
  JudgeGoldens g;
  g.well_formed = obj;
  g.fenced = "Here is my answer:\n```json\n" + obj + "\n```\n";
  g.chat_wrapped = json{{"id", "chatcmpl-1"},
                        {"object", "chat.completion"},
                        {"choices", json::array({{{"index", 0},
                                                  {"message", {{"role", "assistant"}, {"content", obj}}},
                                                  {"finish_reason", "stop"}}})}}
                       .dump();
  g.outside_candidate =
      R"({"reasoning": "Clocks and a bell.", "interpretable": true, "concrete_words": ["clocks", "bell"], "abstract_words": [], "global_words": ["Sky"]})";
  g.no_json = "I cannot evaluate this image.";
  g.missing_key = R"({"reasoning": "x", "interpretable": false, "concrete_words": [], "abstract_words": []})";
  g.type_error =
      R"({"reasoning": "x", "interpretable": "yes", "concrete_words": [], "abstract_words": [], "global_words": []})";
  g.empty_interpretable =
      R"({"reasoning": "x", "interpretable": true, "concrete_words": [], "abstract_words": [], "global_words": []})";
  return g;
}

}  // namespace latentlens::testkit
