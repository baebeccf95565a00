#include "latentlens/lens.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "latentlens/error.hpp"
#include "latentlens/quantizer.hpp"
#include "latentlens/top_k.hpp"
#include "latentlens/vector_ops.hpp"

namespace latentlens::lens {
namespace {

void check_matrix(const LatentVector& h, const io::VocabularyMatrix& m) {
  if (h.values.size() != m.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "query dim " + std::to_string(h.values.size()) +
                                                   " vs matrix dim " + std::to_string(m.dim));
  }
  if (m.values.size() != m.rows() * std::size_t{m.dim}) {
    throw Error(ErrorCode::kCorruptInput, "vocabulary matrix shape is inconsistent");
  }
  if (!all_finite(h.values)) throw Error(ErrorCode::kRejectedInput, "query has non-finite components");
}

std::vector<Match> vocab_matches(const std::vector<ScoredId>& best, const io::VocabularyMatrix& m) {
  std::vector<Match> out;
  out.reserve(best.size());
  for (const ScoredId& s : best) {
    Match match;
    match.score = s.score;
    match.description = m.tokens[s.id];
    match.vocab_token_id = static_cast<std::uint32_t>(s.id);
    match.reference_id = s.id;
    out.push_back(std::move(match));
  }
  return out;
}

}  // namespace

LatentVector from_record(const io::VisualLatentRecord& r) {
  LatentVector h;
  h.values = r.vector;
  h.layer_id = r.layer_id;
  h.modality = Modality::kVisual;
  h.source_id = r.image_id;
  h.row = r.patch_row;
  h.col = r.patch_col;
  return h;
}

std::vector<Match> embedding_lens(const LatentVector& h, const io::VocabularyMatrix& emb, std::size_t k) {
  check_matrix(h, emb);
  const float hn = l2_norm(h.values);
  if (!(hn > 0.0f)) throw Error(ErrorCode::kDegenerateQuery, "zero-norm query");
  TopK acc(k);
  for (std::size_t v = 0; v < emb.rows(); ++v) {
    const auto row = emb.row(v);
    const float rn = l2_norm(row);
    const float score = rn > 0.0f ? dot(h.values, row) / (hn * rn) : 0.0f;
    acc.push(score, v);
  }
  return vocab_matches(acc.sorted(), emb);
}

std::vector<Match> logit_lens(const LatentVector& h, const io::VocabularyMatrix& unemb, std::size_t k,
                              const LogitOptions& options) {
  check_matrix(h, unemb);
  std::vector<float> q = h.values;
  if (options.final_norm) {
    if (!options.norm_gain.empty() && options.norm_gain.size() != q.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "norm gain size differs from query dim");
    }
    double ms = 0.0;
    for (float x : q) ms += static_cast<double>(x) * x;
    const auto inv = static_cast<float>(1.0 / std::sqrt(ms / q.size() + options.norm_eps));
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] *= inv;
      if (!options.norm_gain.empty()) q[i] *= options.norm_gain[i];
    }
  }
  TopK acc(k);
  for (std::size_t v = 0; v < unemb.rows(); ++v) acc.push(dot(q, unemb.row(v)), v);
  return vocab_matches(acc.sorted(), unemb);
}

std::vector<Match> latent_lens(const LatentVector& h, const corpus::CorpusIndex& index, std::size_t k,
                               const LatentLensOptions& options) {
  if (h.values.size() != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query dim " + std::to_string(h.values.size()) +
                                                   " vs index dim " + std::to_string(index.dim()));
  }
  if (!all_finite(h.values)) throw Error(ErrorCode::kRejectedInput, "query has non-finite components");
  const std::vector<float> q = normalized(h.values);

  std::vector<std::size_t> ordinals;
  if (options.layer_filter) {
    if (options.layer_filter->empty()) throw Error(ErrorCode::kRejectedInput, "empty layer filter");
    for (std::uint16_t layer : *options.layer_filter) {
      const auto ord = index.shard_ordinal(layer);
      if (!ord) throw Error(ErrorCode::kRejectedInput, "layer " + std::to_string(layer) + " is not stored");
      ordinals.push_back(*ord);
    }
    std::sort(ordinals.begin(), ordinals.end());
    ordinals.erase(std::unique(ordinals.begin(), ordinals.end()), ordinals.end());
  } else {
    for (std::size_t i = 0; i < index.shards().size(); ++i) ordinals.push_back(i);
  }

  // Flatten (shard, begin, end) work ranges so threads get equal entry counts.
  struct Range {
    std::size_t shard, begin, end;
  };
  std::size_t total = 0;
  for (std::size_t o : ordinals) total += index.shards()[o].size();
  const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(
                                                                                std::max<std::size_t>(1, total / 4096))));
  std::vector<std::vector<Range>> plan(workers);
  {
    const std::size_t per = (total + workers - 1) / workers;
    std::size_t w = 0, used = 0;
    for (std::size_t o : ordinals) {
      const std::size_t n = index.shards()[o].size();
      std::size_t b = 0;
      while (b < n) {
        const std::size_t take = std::min(n - b, per - used);
        plan[w].push_back({o, b, b + take});
        b += take;
        used += take;
        if (used == per && w + 1 < workers) {
          ++w;
          used = 0;
        }
      }
    }
  }

  const auto scan = [&](const std::vector<Range>& ranges, TopK& acc) {
    for (const Range& r : ranges) {
      const corpus::LayerShard& sh = index.shards()[r.shard];
      for (std::size_t i = r.begin; i < r.end; ++i) {
        acc.push(score_codes(sh.codes_of(i), sh.scales[i], q), corpus::make_reference_id(r.shard, i));
      }
    }
  };

  std::vector<TopK> partial(workers, TopK(k));
  if (workers == 1) {
    scan(plan[0], partial[0]);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] { scan(plan[w], partial[w]); });
    }
  }
  for (unsigned w = 1; w < workers; ++w) partial[0].merge(partial[w]);

  std::vector<Match> out;
  for (const ScoredId& s : partial[0].sorted()) {
    const corpus::LayerShard& sh = index.shards()[corpus::reference_shard(s.id)];
    const std::size_t i = corpus::reference_index(s.id);
    const corpus::Phrase& phrase = index.phrases().at(sh.phrase_ids[i]);
    if (sh.token_indices[i] >= phrase.tokens.size()) {
      throw Error(ErrorCode::kCorruptIndex, "entry token index outside its phrase");
    }
    Match m;
    m.score = s.score;
    m.description = phrase.text;
    m.matched_span = phrase.tokens[sh.token_indices[i]].bytes;
    m.source_layer = sh.layer_id;
    m.vocab_token_id = sh.vocab_token_ids[i];
    m.reference_id = s.id;
    m.phrase_id = sh.phrase_ids[i];
    m.token_index = sh.token_indices[i];
    out.push_back(std::move(m));
  }
  return out;
}

std::string_view to_string(LensKind kind) {
  switch (kind) {
    case LensKind::kEmbedding: return "embedding";
    case LensKind::kLogit: return "logit";
    case LensKind::kLatent: return "latent";
  }
  return "unknown";
}

LensKind parse_lens_kind(std::string_view name) {
  if (name == "embedding") return LensKind::kEmbedding;
  if (name == "logit") return LensKind::kLogit;
  if (name == "latent") return LensKind::kLatent;
  throw Error(ErrorCode::kRejectedInput, "unknown lens method '" + std::string(name) + "'");
}

std::vector<Match> describe(const LatentVector& h, const LensMethod& method, const LensResources& res,
                            std::size_t k) {
  switch (method.kind) {
    case LensKind::kEmbedding:
      if (!res.embedding) throw Error(ErrorCode::kConfiguration, "embedding lens needs an embedding matrix");
      return embedding_lens(h, *res.embedding, k);
    case LensKind::kLogit:
      if (!res.unembedding) throw Error(ErrorCode::kConfiguration, "logit lens needs an unembedding matrix");
      return logit_lens(h, *res.unembedding, k, method.logit);
    case LensKind::kLatent: {
      if (!res.index) throw Error(ErrorCode::kConfiguration, "latent lens needs a corpus index");
      LatentLensOptions opts;
      opts.layer_filter = method.layer_filter;
      opts.threads = method.threads;
      return latent_lens(h, *res.index, k, opts);
    }
  }
  throw Error(ErrorCode::kConfiguration, "unknown lens kind");
}

}  // namespace latentlens::lens
