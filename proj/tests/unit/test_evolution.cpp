#include <gtest/gtest.h>

#include "evolution_mocks.hpp"
#include "expect_error.hpp"
#include "generators.hpp"
#include "latentlens/evolution.hpp"

using namespace latentlens;
using namespace latentlens::evolution;

namespace {

lens::LatentVector latent(std::uint64_t seed) {
  gen::Rng rng(seed);
  lens::LatentVector h;
  h.values = rng.gaussian(32);
  h.layer_id = 8;
  return h;
}

CandidatePhrase seed_phrase(std::string text, std::string target) {
  CandidatePhrase c;
  c.text = std::move(text);
  c.target_token = std::move(target);
  return c;
}

}  // namespace

TEST(EvolutionConfig, ParseAndValidate) {
  const auto c = parse_config("rounds=3,variations=7,keep=2,seed=11,substitute=1");
  EXPECT_EQ(c.rounds, 3u);
  EXPECT_EQ(c.variations_per_round, 7u);
  EXPECT_EQ(c.keep, 2u);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_TRUE(c.allow_target_substitution);
  const EvolutionConfig d;
  EXPECT_EQ(d.rounds, 6u);
  EXPECT_EQ(d.variations_per_round, 20u);
  EXPECT_EQ(d.keep, 5u);
  EXPECT_FALSE(d.allow_target_substitution);
  EXPECT_LL_ERROR(parse_config("rounds=0"), ErrorCode::kConfiguration);
  EXPECT_THROW(parse_config("bogus=1"), Error);
}

TEST(EvolutionText, TargetAtEnd) {
  EXPECT_EQ(target_at_end("the old clocks", "clocks"), (io::ByteSpan{8, 14}));
  EXPECT_EQ(target_at_end("the old clocks.", "clocks"), (io::ByteSpan{8, 14}));
  EXPECT_FALSE(target_at_end("the xclocks", "clocks").has_value());
  EXPECT_FALSE(target_at_end("clocks tower", "clocks").has_value());
  EXPECT_EQ(target_at_end("clocks", "clocks"), (io::ByteSpan{0, 6}));
  EXPECT_EQ(last_word("big red barn!"), (io::ByteSpan{8, 12}));
  EXPECT_FALSE(last_word("...").has_value());
}

TEST(EvolutionText, SeedFromMatchTruncatesAfterFullWord) {
  corpus::PhraseTable table;
  std::vector<io::TokenSpan> toks{{{0, 3}, 0, 0}, {{3, 5}, 1, 0}, {{5, 8}, 2, 0}, {{8, 10}, 3, 0}, {{10, 16}, 4, 0}};
  table.add("the belfry tower", toks);
  ASSERT_EQ(table.at(0).text.size(), 16u);
  lens::Match m;
  m.phrase_id = 0;
  m.token_index = 2;
  m.score = 0.4f;
  const auto c = seed_from_match(m, table);
  EXPECT_EQ(c.text, "the belfry");
  EXPECT_EQ(c.target_token, "belfry");
  EXPECT_EQ(c.score, 0.4f);
}

TEST(Evolution, FixedPointKeepsSeed) {
  const auto h = latent(1);
  mocks::PlantedEmbedder emb(h.values);
  mocks::EchoGenerator echo;
  const std::vector<CandidatePhrase> seeds{seed_phrase("tall clocks", "clocks")};
  const auto run = evolve(h, seeds, echo, emb, {});
  ASSERT_EQ(run.rounds.size(), 6u);
  for (const auto& r : run.rounds) {
    EXPECT_TRUE(r.stagnant);
    EXPECT_EQ(r.accepted, 0u);
    EXPECT_EQ(r.duplicates, 20u);
  }
  EXPECT_EQ(run.pool.size(), 1u);
  EXPECT_EQ(run.final_best(), run.initial_best());
}

TEST(Evolution, PlantedOptimumConverges) {
  const auto h = latent(2);
  mocks::PlantedEmbedder emb(h.values);
  mocks::PrefixMutator mut;
  const std::vector<CandidatePhrase> seeds{seed_phrase("a clocks", "clocks"), seed_phrase("tower clocks", "clocks")};
  EvolutionConfig cfg;
  cfg.seed = 3;
  const auto run = evolve(h, seeds, mut, emb, cfg);
  ASSERT_EQ(run.rounds.size(), 6u);
  float prev = run.initial_best();
  for (const auto& r : run.rounds) {
    EXPECT_GE(r.best_score, prev);
    prev = r.best_score;
    EXPECT_EQ(r.generated, 20u);
  }
  EXPECT_NEAR(run.final_best(), 0.9f, 1e-5);
  EXPECT_NEAR(run.initial_best(), 0.42f, 1e-5);
  EXPECT_LE(run.pool.size(), 5u);
  for (std::size_t i = 1; i < run.pool.size(); ++i) {
    EXPECT_TRUE(run.pool[i - 1].score > run.pool[i].score ||
                (run.pool[i - 1].score == run.pool[i].score && run.pool[i - 1].id < run.pool[i].id));
  }
  // Lineage: every non-seed phrase has a parent that was scored earlier.
  for (const auto& c : run.lineage) {
    if (c.round == 0) continue;
    ASSERT_TRUE(c.parent.has_value());
    EXPECT_LT(*c.parent, c.id);
  }
  // Same seed, same run.
  mocks::PlantedEmbedder emb2(h.values);
  const auto again = evolve(h, seeds, mut, emb2, cfg);
  ASSERT_EQ(again.lineage.size(), run.lineage.size());
  for (std::size_t i = 0; i < run.lineage.size(); ++i) EXPECT_EQ(again.lineage[i].text, run.lineage[i].text);
}

TEST(Evolution, ConstraintViolationsAllRejected) {
  const auto h = latent(3);
  mocks::PlantedEmbedder emb(h.values);
  mocks::ConstraintBreaker breaker;
  const std::vector<CandidatePhrase> seeds{seed_phrase("old clocks", "clocks")};
  const auto run = evolve(h, seeds, breaker, emb, {});
  std::size_t generated = 0;
  for (const auto& r : run.rounds) {
    generated += r.generated;
    EXPECT_EQ(r.rejected, r.generated);
    EXPECT_EQ(r.accepted, 0u);
  }
  EXPECT_EQ(generated, 120u);
  EXPECT_EQ(run.rejections.size(), 120u);
  for (const auto& rj : run.rejections) EXPECT_EQ(rj.kind, RejectionKind::kConstraint);
  // Only the seed was ever embedded.
  EXPECT_EQ(emb.calls, 1);
}

TEST(Evolution, SeedsAreValidated) {
  const auto h = latent(4);
  mocks::PlantedEmbedder emb(h.values);
  mocks::EchoGenerator echo;
  EXPECT_LL_ERROR(evolve(h, std::vector<CandidatePhrase>{}, echo, emb, {}), ErrorCode::kRejectedInput);
  const std::vector<CandidatePhrase> bad{seed_phrase("clocks tower", "clocks")};
  EXPECT_LL_ERROR(evolve(h, bad, echo, emb, {}), ErrorCode::kRejectedInput);
  const std::vector<CandidatePhrase> mixed{seed_phrase("clocks tower", "clocks"), seed_phrase("red clocks", "clocks")};
  const auto run = evolve(h, mixed, echo, emb, {});
  EXPECT_EQ(run.seeds.size(), 1u);
  EXPECT_EQ(run.warnings.front().find("seed"), 0u);
  lens::LatentVector zero;
  zero.values.assign(32, 0.0f);
  EXPECT_LL_ERROR(evolve(zero, mixed, echo, emb, {}), ErrorCode::kDegenerateQuery);
}

TEST(Evolution, ImprovementDelta) {
  const auto r = improvement_report(0.415, 0.463);
  EXPECT_EQ(r.delta, 0.048);
  EXPECT_TRUE(r.improved);
  EXPECT_FALSE(r.anomaly);
  EXPECT_TRUE(improvement_report(0.5, 0.4).anomaly);
  EXPECT_FALSE(improvement_report(0.5, 0.5).improved);
}

TEST(Evolution, JsonHasLineage) {
  const auto h = latent(5);
  mocks::PlantedEmbedder emb(h.values);
  mocks::PrefixMutator mut;
  const std::vector<CandidatePhrase> seeds{seed_phrase("a clocks", "clocks")};
  EvolutionConfig cfg;
  cfg.rounds = 2;
  const auto j = to_json(evolve(h, seeds, mut, emb, cfg));
  EXPECT_EQ(j["rounds"].size(), 2u);
  EXPECT_TRUE(j.contains("lineage"));
  EXPECT_TRUE(j.contains("pool"));
}
