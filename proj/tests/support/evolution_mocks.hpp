#pragma once

#include <string>
#include <vector>

#include "latentlens/evolution.hpp"

namespace mocks {

// Embeds a phrase as a*h_hat + sqrt(1-a^2)*u with u orthogonal to h_hat, so
// the cosine with the latent is exactly `a`. `a` is 0.9 when the prefix
// contains "golden" and otherwise grows slowly with the number of words.
class PlantedEmbedder final : public latentlens::evolution::PhraseEmbedder {
 public:
  explicit PlantedEmbedder(std::vector<float> latent);
  std::vector<float> embed(std::string_view text, latentlens::io::ByteSpan target, std::uint16_t layer) override;
  static double planted_score(std::string_view prefix);
  int calls = 0;

 private:
  std::vector<double> h_, u_;
};

// Inserts one random word from a small vocabulary (one of which is
// "golden") in front of the parent's target, keeping the target last.
class PrefixMutator final : public latentlens::evolution::PhraseGenerator {
 public:
  std::vector<std::string> generate(const latentlens::evolution::CandidatePhrase& parent, std::size_t n,
                                    std::uint64_t seed) override;
};

// Returns the parent unchanged n times.
class EchoGenerator final : public latentlens::evolution::PhraseGenerator {
 public:
  std::vector<std::string> generate(const latentlens::evolution::CandidatePhrase& parent, std::size_t n,
                                    std::uint64_t seed) override;
};

// Every variant moves or replaces the target so it is no longer last.
class ConstraintBreaker final : public latentlens::evolution::PhraseGenerator {
 public:
  std::vector<std::string> generate(const latentlens::evolution::CandidatePhrase& parent, std::size_t n,
                                    std::uint64_t seed) override;
};

}  // namespace mocks
