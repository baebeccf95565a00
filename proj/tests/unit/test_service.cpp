#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "evolution_mocks.hpp"
#include "generators.hpp"
#include "latentlens/corpus_index.hpp"
#include "latentlens/service.hpp"
#include "latentlens/testkit.hpp"

using namespace latentlens;
using namespace latentlens::service;
using nlohmann::json;

namespace {

class ServiceFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    spec_ = testkit::diagonal_spec({0, 2}, 2, 4, 32, 11);
    corpus_ = testkit::generate_planted_corpus(spec_);
    paths_ = testkit::write_planted_fixture(corpus_, spec_, dir_ / "fx");
    const std::vector<std::filesystem::path> refs{paths_.references};
    corpus::save_index(corpus::build_index(refs, {}), dir_ / "fx.llns-idx");
  }

  ServiceConfig config() const {
    ServiceConfig c;
    c.index_path = dir_ / "fx.llns-idx";
    c.latent_paths = {paths_.latents};
    c.embedding_path = paths_.embedding;
    c.unembedding_path = paths_.unembedding;
    return c;
  }

  static ApiRequest post(std::string path, json body) { return {"POST", std::move(path), {}, body.dump()}; }
  static ApiRequest get(std::string path) { return {"GET", std::move(path), {}, ""}; }

  json query_body(const testkit::GroundTruth& gt) const {
    return {{"image_id", gt.query.image_id}, {"row", gt.query.row}, {"col", gt.query.col}, {"layer", gt.query.layer}};
  }

  gen::TempDir dir_;
  testkit::PlantedSpec spec_;
  testkit::PlantedCorpus corpus_;
  testkit::FixturePaths paths_;
};

}  // namespace

TEST_F(ServiceFixture, CatalogAndRouting) {
  Service s(config());
  const auto cat = s.handle(get("/v1/catalog"));
  ASSERT_EQ(cat.status, 200);
  const auto j = cat.json();
  EXPECT_EQ(j["methods"], (json{"embedding", "logit", "latent"}));
  EXPECT_EQ(j["index"]["dim"], 32);
  EXPECT_FALSE(j["judge_available"].get<bool>());
  EXPECT_EQ(s.handle(get("/v1/nope")).status, 404);
  EXPECT_EQ(s.handle(get("/elsewhere")).status, 404);
  EXPECT_EQ(s.handle(get("/v1/images/999/patches")).status, 404);
  EXPECT_EQ(s.handle(get("/v1/images/0/patches")).status, 200);
}

TEST_F(ServiceFixture, LensQueryReturnsPlantedMatches) {
  Service s(config());
  for (const auto& gt : corpus_.truth) {
    auto body = query_body(gt);
    body["k"] = gt.expected.size();
    const auto r = s.handle(post("/v1/lens/query", body));
    ASSERT_EQ(r.status, 200) << r.body;
    const auto m = r.json()["matches"];
    ASSERT_EQ(m.size(), gt.expected.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_EQ(m[i]["phrase_id"], gt.expected[i].phrase_id);
      EXPECT_EQ(m[i]["source_layer"], gt.expected[i].source_layer);
      EXPECT_EQ(m[i]["full_word"]["word"], gt.expected[i].full_word);
      EXPECT_EQ(m[i]["rank"], i + 1);
    }
  }
  auto body = query_body(corpus_.truth[0]);
  body["method"] = "embedding";
  EXPECT_EQ(s.handle(post("/v1/lens/query", body)).status, 200);
}

TEST_F(ServiceFixture, BadRequests) {
  Service s(config());
  auto body = query_body(corpus_.truth[0]);
  body["k"] = 0;
  const auto r = s.handle(post("/v1/lens/query", body));
  EXPECT_EQ(r.status, 400);
  EXPECT_TRUE(r.json().contains("error"));
  EXPECT_EQ(s.handle({"POST", "/v1/lens/query", {}, "[1,2"}).status, 400);
  body["k"] = 3;
  body["layer"] = 77;
  EXPECT_EQ(s.handle(post("/v1/lens/query", body)).status, 404);
  body["layer"] = 0;
  body["method"] = "telepathy";
  EXPECT_EQ(s.handle(post("/v1/lens/query", body)).status, 400);
  EXPECT_EQ(s.handle(get("/v1/analysis/bogus")).status, 404);
  EXPECT_EQ(s.handle(get("/v1/analysis/drift?dump=4")).status, 404);
}

TEST_F(ServiceFixture, CorsAndOptions) {
  auto c = config();
  c.cors_origin = "http://localhost:5173";
  Service s(c);
  const auto opt = s.handle({"OPTIONS", "/v1/lens/query", {}, ""});
  EXPECT_EQ(opt.status, 204);
  EXPECT_EQ(opt.headers.at("Access-Control-Allow-Origin"), "http://localhost:5173");
  EXPECT_EQ(s.handle(get("/v1/missing")).headers.at("Access-Control-Allow-Origin"), "http://localhost:5173");
}

TEST_F(ServiceFixture, AnalysesRespond) {
  Service s(config());
  ApiRequest r = get("/v1/analysis/layer-alignment");
  r.query["k"] = "4";
  const auto a = s.handle(r);
  ASSERT_EQ(a.status, 200) << a.body;
  EXPECT_EQ(s.handle(r).body, a.body);  // memoized
  EXPECT_EQ(s.handle(get("/v1/analysis/norms")).status, 200);
  EXPECT_EQ(s.handle(get("/v1/analysis/drift")).status, 200);
  EXPECT_EQ(s.handle(get("/v1/analysis/similarity-hist")).status, 200);
}

TEST_F(ServiceFixture, JudgeUnavailableWithoutTransport) {
  Service s(config());
  const auto r = s.handle(post("/v1/judge/batch", {{"items", json::array()}}));
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(s.handle(post("/v1/evolve", query_body(corpus_.truth[0]))).status, 503);
}

TEST_F(ServiceFixture, EvolveJobLifecycle) {
  auto c = config();
  const std::vector<float> h = [&] {
    for (const auto& l : corpus_.latents) {
      if (l.layer_id == corpus_.truth[0].query.layer && l.image_id == corpus_.truth[0].query.image_id &&
          l.patch_row == corpus_.truth[0].query.row && l.patch_col == corpus_.truth[0].query.col) {
        return l.vector;
      }
    }
    return std::vector<float>{};
  }();
  ASSERT_FALSE(h.empty());
  c.evolution_backend = [h] {
    EvolutionBackend b;
    b.generator = std::make_unique<mocks::PrefixMutator>();
    b.embedder = std::make_unique<mocks::PlantedEmbedder>(h);
    return b;
  };
  Service s(c);
  auto body = query_body(corpus_.truth[0]);
  body["config"] = {{"rounds", 2}, {"seed", 4}};
  const auto start = s.handle(post("/v1/evolve", body));
  ASSERT_EQ(start.status, 202) << start.body;
  const std::string id = start.json()["job"];
  const auto early = s.handle(get("/v1/evolve/" + id));
  EXPECT_TRUE(early.status == 409 || early.status == 200);
  s.wait_for_jobs();
  const auto done = s.handle(get("/v1/evolve/" + id));
  ASSERT_EQ(done.status, 200) << done.body;
  EXPECT_EQ(done.json()["status"], "done");
  EXPECT_EQ(done.json()["rounds"].size(), 2u);
  EXPECT_EQ(s.handle(get("/v1/evolve/evolve-999")).status, 404);
  EXPECT_EQ(s.handle(get("/v1/judge/" + id)).status, 404);
}

TEST_F(ServiceFixture, RunningJobAnswers409) {
  auto c = config();
  auto gate = std::make_shared<std::atomic<bool>>(false);
  struct SlowGen final : evolution::PhraseGenerator {
    std::shared_ptr<std::atomic<bool>> gate;
    std::vector<std::string> generate(const evolution::CandidatePhrase& p, std::size_t n, std::uint64_t) override {
      while (!gate->load()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
      return std::vector<std::string>(n, p.text);
    }
  };
  c.evolution_backend = [gate] {
    EvolutionBackend b;
    auto g = std::make_unique<SlowGen>();
    g->gate = gate;
    b.generator = std::move(g);
    b.embedder = std::make_unique<mocks::PlantedEmbedder>(std::vector<float>(32, 1.0f));
    return b;
  };
  Service s(c);
  auto body = query_body(corpus_.truth[0]);
  body["config"] = {{"rounds", 1}};
  body["seeds"] = json::array({{{"text", "old clocks"}, {"target_token", "clocks"}}});
  const std::string id = s.handle(post("/v1/evolve", body)).json()["job"];
  const auto r = s.handle(get("/v1/evolve/" + id));
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(r.json()["error"]["code"], "job_running");
  gate->store(true);
  s.wait_for_jobs();
  EXPECT_EQ(s.handle(get("/v1/evolve/" + id)).status, 200);
}

TEST_F(ServiceFixture, ServesOverHttp) {
  Service s(config());
  const int port = s.serve_background("127.0.0.1", 0);
  EXPECT_GT(port, 0);
  s.stop();
}
