#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace latentlens {

struct ScoredId {
  float score = 0.0f;
  std::uint64_t id = 0;

  bool operator==(const ScoredId&) const = default;
};

/// Total order used everywhere results are ranked: higher score first,
/// ascending id among equal scores.
constexpr bool ranks_before(const ScoredId& a, const ScoredId& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

/// Bounded selection of the k best candidates under ranks_before.
/// Partial accumulators over disjoint candidate sets can be merged; the
/// result equals a single pass over the union.
class TopK {
 public:
  /// Throws Error(kRejectedInput) when k == 0.
  explicit TopK(std::size_t k);

  void push(float score, std::uint64_t id);
  void merge(const TopK& other);

  std::size_t k() const { return k_; }
  std::size_t size() const { return heap_.size(); }

  /// Best first.
  std::vector<ScoredId> sorted() const;

 private:
  std::size_t k_;
  std::vector<ScoredId> heap_;  // worst candidate at the front
};

/// The k best of `candidates` (all of them if fewer than k), best first.
std::vector<ScoredId> top_k(std::span<const ScoredId> candidates, std::size_t k);

/// Same, with ids equal to positions in `scores`.
std::vector<ScoredId> top_k(std::span<const float> scores, std::size_t k);

}  // namespace latentlens
