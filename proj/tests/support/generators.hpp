#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "latentlens/corpus_index.hpp"
#include "latentlens/formats.hpp"

namespace gen {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
  }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
  float normal() { return static_cast<float>(std::normal_distribution<double>(0.0, 1.0)(eng_)); }

  std::vector<float> gaussian(std::size_t d);
  std::vector<float> unit(std::size_t d);
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

// n x d row-major Gaussian rows; every `dup_every`-th row (if nonzero)
// copies an earlier row so exact score ties exist.
std::vector<float> gaussian_rows(Rng& rng, std::size_t n, std::size_t d, std::size_t dup_every = 0);

// Rows that are signed permutations of one integer base vector holding a
// component of 127: all rows share a norm and quantize without error.
std::vector<float> lattice_rows(Rng& rng, std::size_t n, std::size_t d);
// +-1 entries on 4, 16 or 64 random coordinates (d >= 64): the norm is a
// power of two, so normalization is exact.
std::vector<float> lattice_query(Rng& rng, std::size_t d);

struct TokenizedPhrase {
  std::string text;
  std::vector<latentlens::io::TokenSpan> tokens;
};

// Words of 1-3 pieces (ASCII and two-byte UTF-8 letters) joined by spaces,
// commas, hyphens and periods. Separators sit either in their own token or
// as a leading byte of the next word piece; spans tile the text.
TokenizedPhrase tokenized_phrase(Rng& rng);

// Reference dump with the given phrases; every token of every phrase gets
// one record per layer.
struct RefFixture {
  latentlens::io::DumpHeader header;
  std::vector<latentlens::io::PhraseRecord> phrases;
  std::vector<latentlens::io::ReferenceEmbeddingRecord> records;
};
void write_ref_dump(const std::filesystem::path& path, const RefFixture& fx);

// One single-token phrase "w<i>" per row, vocab id i, stored at
// layers[i % layers.size()]. Entry order within each shard is row order.
latentlens::corpus::CorpusIndex single_token_index(const std::vector<float>& rows, std::size_t d,
                                                   const std::vector<std::uint16_t>& layers);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& path);

}  // namespace gen
