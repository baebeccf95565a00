#include <gtest/gtest.h>

#include "expect_error.hpp"
#include "generators.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/vector_ops.hpp"
#include "oracles.hpp"

using namespace latentlens;
using namespace latentlens::lens;

namespace {

io::VocabularyMatrix matrix_from(const std::vector<float>& rows, std::size_t d) {
  io::VocabularyMatrix m;
  m.dim = static_cast<std::uint32_t>(d);
  m.values = rows;
  for (std::size_t i = 0; i < rows.size() / d; ++i) m.tokens.push_back("t" + std::to_string(i));
  return m;
}

LatentVector query(std::vector<float> v, std::uint16_t layer = 0) {
  LatentVector h;
  h.values = std::move(v);
  h.layer_id = layer;
  return h;
}

std::vector<std::uint64_t> ids(const std::vector<Match>& ms) {
  std::vector<std::uint64_t> out;
  for (const auto& m : ms) out.push_back(m.vocab_token_id);
  return out;
}

}  // namespace

TEST(EmbeddingLens, SelfRowIsTopOne) {
  gen::Rng rng(41);
  const auto rows = gen::gaussian_rows(rng, 50, 16);
  const auto m = matrix_from(rows, 16);
  const auto h = query(std::vector<float>(rows.begin() + 16 * 7, rows.begin() + 16 * 8));
  const auto res = embedding_lens(h, m, 3);
  ASSERT_EQ(res.size(), 3u);
  EXPECT_EQ(res[0].vocab_token_id, 7u);
  EXPECT_NEAR(res[0].score, 1.0f, 1e-6);
  EXPECT_EQ(res[0].description, "t7");
  for (std::size_t i = 1; i < res.size(); ++i) EXPECT_GE(res[i - 1].score, res[i].score);
}

TEST(EmbeddingLens, NegatedRowComesLast) {
  gen::Rng rng(42);
  const auto rows = gen::gaussian_rows(rng, 40, 8);
  const auto m = matrix_from(rows, 8);
  std::vector<float> neg(rows.begin() + 8 * 5, rows.begin() + 8 * 6);
  for (float& x : neg) x = -x;
  const auto res = embedding_lens(query(neg), m, 40);
  EXPECT_EQ(res.back().vocab_token_id, 5u);
  EXPECT_NEAR(res.back().score, -1.0f, 1e-6);
}

TEST(EmbeddingLens, Errors) {
  const auto m = matrix_from({1, 0, 0, 1}, 2);
  EXPECT_LL_ERROR(embedding_lens(query({0, 0}), m), ErrorCode::kDegenerateQuery);
  EXPECT_LL_ERROR(embedding_lens(query({1, 0, 0}), m), ErrorCode::kDimensionMismatch);
}

TEST(LogitLens, IdentityBasis) {
  std::vector<float> eye(8 * 8, 0.0f);
  for (int i = 0; i < 8; ++i) eye[i * 8 + i] = 1.0f;
  std::vector<float> e3(8, 0.0f);
  e3[3] = 1.0f;
  const auto res = logit_lens(query(e3), matrix_from(eye, 8), 1);
  EXPECT_EQ(res[0].vocab_token_id, 3u);
  EXPECT_EQ(res[0].score, 1.0f);
}

TEST(LogitLens, ScalingScalesScoresKeepsOrder) {
  gen::Rng rng(43);
  const auto m = matrix_from(gen::gaussian_rows(rng, 200, 16), 16);
  auto h = rng.gaussian(16);
  const auto a = logit_lens(query(h), m, 10);
  for (float& x : h) x *= 10.0f;
  const auto b = logit_lens(query(h), m, 10);
  EXPECT_EQ(ids(a), ids(b));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i].score, 10.0f * a[i].score, 1e-4f * std::fabs(b[i].score) + 1e-4f);
}

TEST(LogitLens, FinalNormIsOptIn) {
  const auto m = matrix_from({1, 0, 0, 1}, 2);
  const auto plain = logit_lens(query({3, 4}), m, 2);
  EXPECT_EQ(plain[0].score, 4.0f);
  LogitOptions opt;
  opt.final_norm = true;
  opt.norm_eps = 0.0f;
  const auto normed = logit_lens(query({3, 4}), m, 2, opt);
  // RMS of (3, 4) is sqrt(12.5).
  EXPECT_NEAR(normed[0].score, 4.0 / std::sqrt(12.5), 1e-6);
  opt.norm_gain = {1.0f, 2.0f};
  EXPECT_NEAR(logit_lens(query({3, 4}), m, 2, opt)[0].score, 8.0 / std::sqrt(12.5), 1e-6);
}

TEST(LensProperty, EmbeddingAndLogitMatchNaiveScans) {
  gen::Rng rng(44);
  const std::size_t d = 32;
  const auto rows = gen::gaussian_rows(rng, 1000, d, 7);
  const auto m = matrix_from(rows, d);
  for (int q = 0; q < 30; ++q) {
    const auto h = rng.gaussian(d);
    for (std::size_t k : {1, 5, 50}) {
      const auto e = oracle::compare_ranking(ids(embedding_lens(query(h), m, k)), oracle::embedding_scan(h, rows, d), k, 1e-6);
      EXPECT_TRUE(e.ok) << e.detail;
      const auto l = oracle::compare_ranking(ids(logit_lens(query(h), m, k)), oracle::logit_scan(h, rows, d), k, 1e-5);
      EXPECT_TRUE(l.ok) << l.detail;
    }
  }
}

TEST(LatentLens, SelfMatchOnLattice) {
  gen::Rng rng(45);
  const std::size_t d = 64;
  const auto rows = gen::lattice_rows(rng, 300, d);
  const auto idx = gen::single_token_index(rows, d, {4});
  const std::vector<float> h(rows.begin() + 17 * d, rows.begin() + 18 * d);
  const auto res = latent_lens(query(h), idx, 1);
  EXPECT_EQ(res[0].vocab_token_id, 17u);
  EXPECT_GE(res[0].score, 0.9999f);
  EXPECT_EQ(res[0].source_layer, std::optional<std::uint16_t>(4));
  EXPECT_EQ(res[0].description, "w17");
  EXPECT_EQ(res[0].matched_span, (io::ByteSpan{0, 3}));
}

// Random unit vectors at small d reconstruct themselves only to about
// 2e-3; the bound below comes from the per-component error scale/254.
TEST(LatentLens, SelfMatchRandomWithinDerivedBound) {
  gen::Rng rng(46);
  const std::size_t d = 64;
  const auto rows = gen::gaussian_rows(rng, 200, d);
  const auto idx = gen::single_token_index(rows, d, {0});
  for (std::size_t i = 0; i < 200; ++i) {
    const std::vector<float> h(rows.begin() + i * d, rows.begin() + (i + 1) * d);
    const auto res = latent_lens(query(h), idx, 1);
    EXPECT_EQ(res[0].vocab_token_id, i);
    EXPECT_NEAR(res[0].score, 1.0f, 5e-3f);
  }
}

TEST(LatentLens, LayerFilterExcludesBetterLayer) {
  const std::size_t d = 8;
  // Row 0 (layer 16) is the query itself; row 1 (layer 8) is close to it.
  std::vector<float> rows{1, 0, 0, 0, 0, 0, 0, 0,   //
                          1, 0.3f, 0, 0, 0, 0, 0, 0,  //
                          0, 1, 0, 0, 0, 0, 0, 0};
  const auto idx = gen::single_token_index(rows, d, {16, 8, 8});
  const auto h = query({1, 0, 0, 0, 0, 0, 0, 0}, 8);
  EXPECT_EQ(latent_lens(h, idx, 1)[0].source_layer, std::optional<std::uint16_t>(16));
  LatentLensOptions only8;
  only8.layer_filter = std::vector<std::uint16_t>{8};
  const auto res = latent_lens(h, idx, 5, only8);
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(res[0].vocab_token_id, 1u);
  for (const auto& m : res) EXPECT_EQ(m.source_layer, std::optional<std::uint16_t>(8));
  only8.layer_filter = std::vector<std::uint16_t>{};
  EXPECT_LL_ERROR(latent_lens(h, idx, 5, only8), ErrorCode::kRejectedInput);
  only8.layer_filter = std::vector<std::uint16_t>{3};
  EXPECT_LL_ERROR(latent_lens(h, idx, 5, only8), ErrorCode::kRejectedInput);
  EXPECT_LL_ERROR(latent_lens(query(std::vector<float>(8, 0.0f)), idx), ErrorCode::kDegenerateQuery);
  EXPECT_LL_ERROR(latent_lens(query({1, 2}), idx), ErrorCode::kDimensionMismatch);
}

TEST(LensProperty, LatentMatchesDequantizedBruteForce) {
  gen::Rng rng(47);
  const std::size_t d = 48;
  const auto rows = gen::gaussian_rows(rng, 9000, d, 11);
  const auto idx = gen::single_token_index(rows, d, {2, 6});
  for (int q = 0; q < 20; ++q) {
    const auto h = rng.gaussian(d);
    const double hn = oracle::norm(h);
    std::vector<oracle::Scored> all;
    for (std::size_t s = 0; s < idx.shards().size(); ++s) {
      for (std::size_t i = 0; i < idx.shards()[s].size(); ++i) {
        const auto e = idx.entry(corpus::make_reference_id(s, i));
        long double acc = 0.0L;
        for (std::size_t j = 0; j < d; ++j) acc += static_cast<long double>(e.vector.codes[j]) * e.vector.scale / 127.0L * (h[j] / hn);
        all.push_back({static_cast<double>(acc), corpus::make_reference_id(s, i)});
      }
    }
    for (unsigned threads : {1u, 3u}) {
      LatentLensOptions opt;
      opt.threads = threads;
      const auto res = latent_lens(query(h), idx, 5, opt);
      std::vector<std::uint64_t> got;
      for (const auto& m : res) got.push_back(m.reference_id);
      const auto rc = oracle::compare_ranking(got, all, 5, 1e-6);
      EXPECT_TRUE(rc.ok) << rc.detail;
      const auto want = oracle::full_sort_top_k(all, 5);
      for (std::size_t r = 0; r < res.size(); ++r) EXPECT_NEAR(res[r].score, want[r].score, 2e-6);
    }
  }
}

TEST(LensProperty, ScaleInvariantOrderings) {
  gen::Rng rng(48);
  const std::size_t d = 16;
  const auto rows = gen::gaussian_rows(rng, 300, d);
  const auto m = matrix_from(rows, d);
  const auto idx = gen::single_token_index(rows, d, {0});
  for (int q = 0; q < 20; ++q) {
    auto h = rng.gaussian(d);
    const auto e1 = ids(embedding_lens(query(h), m, 10));
    const auto l1 = ids(latent_lens(query(h), idx, 10));
    for (float& x : h) x *= 4.0f;  // power of two keeps every product exact
    EXPECT_EQ(ids(embedding_lens(query(h), m, 10)), e1);
    EXPECT_EQ(ids(latent_lens(query(h), idx, 10)), l1);
  }
}

TEST(LensProperty, ReductionToEmbeddingLensOnLattice) {
  gen::Rng rng(49);
  const std::size_t d = 64;
  const auto rows = gen::lattice_rows(rng, 500, d);
  const auto m = matrix_from(rows, d);
  const auto idx = gen::single_token_index(rows, d, {0});
  for (int q = 0; q < 100; ++q) {
    const auto h = query(gen::lattice_query(rng, d));
    EXPECT_EQ(ids(latent_lens(h, idx, 25)), ids(embedding_lens(h, m, 25)));
  }
}

TEST(Describe, DispatchEquivalence) {
  gen::Rng rng(50);
  const std::size_t d = 16;
  const auto rows = gen::gaussian_rows(rng, 100, d);
  const auto m = matrix_from(rows, d);
  const auto idx = gen::single_token_index(rows, d, {0, 1});
  const LensResources res{&m, &m, &idx};
  const auto h = query(rng.gaussian(d));
  LensMethod meth;
  meth.kind = LensKind::kEmbedding;
  EXPECT_EQ(describe(h, meth, res, 5), embedding_lens(h, m, 5));
  meth.kind = LensKind::kLogit;
  EXPECT_EQ(describe(h, meth, res, 5), logit_lens(h, m, 5));
  meth.kind = LensKind::kLatent;
  meth.layer_filter = std::vector<std::uint16_t>{1};
  LatentLensOptions opt;
  opt.layer_filter = meth.layer_filter;
  EXPECT_EQ(describe(h, meth, res, 5), latent_lens(h, idx, 5, opt));
  EXPECT_LL_ERROR(describe(h, meth, LensResources{&m, &m, nullptr}), ErrorCode::kConfiguration);
  meth.kind = LensKind::kEmbedding;
  EXPECT_LL_ERROR(describe(h, meth, LensResources{nullptr, &m, &idx}), ErrorCode::kConfiguration);
  EXPECT_EQ(parse_lens_kind("logit"), LensKind::kLogit);
  EXPECT_LL_ERROR(parse_lens_kind("tuned"), ErrorCode::kRejectedInput);
}

TEST(Lens, Deterministic) {
  gen::Rng rng(51);
  const std::size_t d = 16;
  const auto rows = gen::gaussian_rows(rng, 400, d, 5);
  const auto idx = gen::single_token_index(rows, d, {0, 3});
  const auto h = query(rng.gaussian(d));
  EXPECT_EQ(latent_lens(h, idx, 20), latent_lens(h, idx, 20));
}
