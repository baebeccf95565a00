#include "latentlens/top_k.hpp"

#include <algorithm>

#include "latentlens/error.hpp"

namespace latentlens {
namespace {

struct WorstOnTop {
  bool operator()(const ScoredId& a, const ScoredId& b) const { return ranks_before(a, b); }
};

}  // namespace

TopK::TopK(std::size_t k) : k_(k) {
  if (k == 0) throw Error(ErrorCode::kRejectedInput, "k must be >= 1");
  heap_.reserve(std::min<std::size_t>(k, 1u << 16));
}

void TopK::push(float score, std::uint64_t id) {
  const ScoredId c{score, id};
  if (heap_.size() < k_) {
    heap_.push_back(c);
    std::push_heap(heap_.begin(), heap_.end(), WorstOnTop{});
    return;
  }
  if (!ranks_before(c, heap_.front())) return;
  std::pop_heap(heap_.begin(), heap_.end(), WorstOnTop{});
  heap_.back() = c;
  std::push_heap(heap_.begin(), heap_.end(), WorstOnTop{});
}

void TopK::merge(const TopK& other) {
  for (const ScoredId& c : other.heap_) push(c.score, c.id);
}

std::vector<ScoredId> TopK::sorted() const {
  std::vector<ScoredId> out = heap_;
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

std::vector<ScoredId> top_k(std::span<const ScoredId> candidates, std::size_t k) {
  TopK acc(k);
  for (const ScoredId& c : candidates) acc.push(c.score, c.id);
  return acc.sorted();
}

std::vector<ScoredId> top_k(std::span<const float> scores, std::size_t k) {
  TopK acc(k);
  for (std::size_t i = 0; i < scores.size(); ++i) acc.push(scores[i], i);
  return acc.sorted();
}

}  // namespace latentlens
