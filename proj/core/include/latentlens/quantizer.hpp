#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace latentlens {

/// Number of positive code levels; codes live in [-127, 127].
inline constexpr int kQuantLevels = 127;

/// Signed 8-bit symmetric max-abs code of one vector.
///
/// `scale` is max_i |v_i| of the source vector (1 for the all-zero vector)
/// and code_i = round_half_away(v_i / scale * 127). Reconstruction is
/// code_i * scale / 127, accurate to scale / 254 per component.
struct QuantizedVector {
  std::vector<int8_t> codes;
  float scale = 1.0f;

  std::size_t dim() const { return codes.size(); }
  bool operator==(const QuantizedVector&) const = default;
};

/// Throws Error(kRejectedInput) for empty or non-finite input.
QuantizedVector quantize(std::span<const float> v);

/// Writes codes into `codes` (size must equal v.size()) and returns the scale.
/// Same arithmetic as quantize(); used by the index builder to fill shard
/// storage in place.
float quantize_into(std::span<const float> v, std::span<int8_t> codes);

std::vector<float> dequantize(const QuantizedVector& q);

/// dot(dequantize(a), b). With unit-normalized sources this is the cosine
/// estimate used at query time.
float score_quantized(const QuantizedVector& a, std::span<const float> b);

/// Scoring kernel over raw code storage: (sum_i codes_i * b_i) * scale / 127.
/// Caller guarantees codes.size() == b.size().
float score_codes(std::span<const int8_t> codes, float scale, std::span<const float> b) noexcept;

/// Bytes of a serialized QuantizedVector: d codes plus a float32 scale.
constexpr std::size_t quantized_storage_bytes(std::size_t dim) { return dim + sizeof(float); }

}  // namespace latentlens
