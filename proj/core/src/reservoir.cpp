#include "latentlens/reservoir.hpp"

#include "latentlens/error.hpp"

namespace latentlens::corpus {

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Reservoir::Reservoir(ReservoirKey key, std::uint32_t cap)
    : stream_(mix64(mix64(key.seed) ^ (std::uint64_t{key.vocab_token_id} << 16 | key.layer_id))),
      cap_(cap) {
  if (cap == 0) throw Error(ErrorCode::kRejectedInput, "reservoir cap must be >= 1");
}

std::uint64_t Reservoir::uniform_below(std::uint64_t n) {
  // Lemire's multiply-shift with rejection for exact uniformity.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = mix64(stream_ + draws_++ * 0xD1B54A32D192ED03ull);
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

std::optional<std::uint32_t> Reservoir::admit() {
  ++seen_;
  if (seen_ <= cap_) return static_cast<std::uint32_t>(seen_ - 1);
  const std::uint64_t j = uniform_below(seen_);
  if (j < cap_) return static_cast<std::uint32_t>(j);
  return std::nullopt;
}

void Reservoir::set_slot(std::uint32_t slot, std::uint32_t ref) {
  if (slot == slots_.size()) {
    slots_.push_back(ref);
  } else if (slot < slots_.size()) {
    slots_[slot] = ref;
  } else {
    throw Error(ErrorCode::kRejectedInput, "reservoir slot out of range");
  }
}

}  // namespace latentlens::corpus
