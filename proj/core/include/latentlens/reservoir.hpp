#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace latentlens::corpus {

/// Counter-based random stream identity. Each (token, layer) reservoir draws
/// from its own stream, so the interleaving of other tokens in the input
/// never changes which items a reservoir keeps.
struct ReservoirKey {
  std::uint64_t seed = 0;
  std::uint32_t vocab_token_id = 0;
  std::uint16_t layer_id = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

/// Algorithm R over a stream of unknown length with fixed capacity.
///
/// The first `cap` candidates are always admitted into slots 0..cap-1.
/// Candidate n > cap is admitted with probability cap/n and replaces a
/// uniformly chosen slot. `slots` holds caller-defined entry references.
class Reservoir {
 public:
  Reservoir(ReservoirKey key, std::uint32_t cap);

  /// Slot index the n-th candidate should occupy, or nullopt if rejected.
  std::optional<std::uint32_t> admit();

  /// Records the entry reference stored at `slot` (slot == size() appends).
  void set_slot(std::uint32_t slot, std::uint32_t ref);

  std::uint64_t seen() const { return seen_; }
  std::uint32_t cap() const { return cap_; }
  std::span<const std::uint32_t> slots() const { return slots_; }

 private:
  std::uint64_t uniform_below(std::uint64_t n);

  std::uint64_t stream_;
  std::uint64_t seen_ = 0;
  std::uint64_t draws_ = 0;
  std::uint32_t cap_;
  std::vector<std::uint32_t> slots_;
};

}  // namespace latentlens::corpus
