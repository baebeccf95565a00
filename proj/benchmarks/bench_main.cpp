#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "latentlens/corpus_index.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/quantizer.hpp"
#include "latentlens/top_k.hpp"

using namespace latentlens;

namespace {

std::vector<float> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (float& x : v) x = nd(rng);
  return v;
}

// Single-token phrases spread over two layers.
corpus::CorpusIndex make_index(std::size_t n, std::size_t d) {
  std::vector<io::PhraseRecord> phrases;
  for (std::uint32_t i = 0; i < n; ++i) {
    io::PhraseRecord p;
    p.phrase_id = i;
    p.text = "w" + std::to_string(i);
    p.tokens = {{{0, static_cast<std::uint32_t>(p.text.size())}, i, 0}};
    phrases.push_back(std::move(p));
  }
  corpus::IndexBuilder b({});
  b.begin_stream({io::StreamKind::kReference, static_cast<std::uint32_t>(d), "bench", {8, 16}}, phrases);
  const auto rows = gaussian(n * d, 7);
  for (std::uint32_t i = 0; i < n; ++i) {
    b.add_record({i, 0, i, static_cast<std::uint16_t>(i % 2 ? 16 : 8),
                  std::vector<float>(rows.begin() + i * d, rows.begin() + (i + 1) * d)});
  }
  return b.finish();
}

void BM_Quantize(benchmark::State& state) {
  const auto v = gaussian(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(quantize(v));
  state.SetBytesProcessed(state.iterations() * state.range(0) * sizeof(float));
}
BENCHMARK(BM_Quantize)->Arg(64)->Arg(4096);

void BM_ScoreCodes(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto q = quantize(gaussian(d, 2));
  const auto b = gaussian(d, 3);
  for (auto _ : state) benchmark::DoNotOptimize(score_codes(q.codes, q.scale, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScoreCodes)->Arg(64)->Arg(4096);

void BM_TopK(benchmark::State& state) {
  const auto scores = gaussian(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(top_k(std::span<const float>(scores), 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TopK)->Arg(10000)->Arg(1000000);

void BM_LatentLensScan(benchmark::State& state) {
  const std::size_t d = 256;
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto idx = make_index(n, d);
  lens::LatentVector h;
  h.values = gaussian(d, 5);
  lens::LatentLensOptions opt;
  opt.threads = static_cast<unsigned>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(lens::latent_lens(h, idx, 5, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LatentLensScan)->Args({20000, 1})->Args({20000, 4})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
