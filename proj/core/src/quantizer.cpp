#include "latentlens/quantizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "latentlens/error.hpp"

namespace latentlens {

float quantize_into(std::span<const float> v, std::span<int8_t> codes) {
  if (v.empty()) throw Error(ErrorCode::kRejectedInput, "cannot quantize an empty vector");
  if (codes.size() != v.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "code buffer size differs from vector size");
  }
  float max_abs = 0.0f;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorCode::kRejectedInput, "non-finite component at index " + std::to_string(i));
    }
    max_abs = std::max(max_abs, std::fabs(v[i]));
  }
  if (max_abs == 0.0f) {
    std::fill(codes.begin(), codes.end(), int8_t{0});
    return 1.0f;
  }
  // Double precision keeps the division exact enough that the rounding
  // decision is identical on every IEEE platform; std::round is
  // half-away-from-zero.
  const double inv = static_cast<double>(kQuantLevels) / static_cast<double>(max_abs);
  for (std::size_t i = 0; i < v.size(); ++i) {
    double c = std::round(static_cast<double>(v[i]) * inv);
    if (c > kQuantLevels) c = kQuantLevels;
    if (c < -kQuantLevels) c = -kQuantLevels;
    codes[i] = static_cast<int8_t>(c);
  }
  return max_abs;
}

QuantizedVector quantize(std::span<const float> v) {
  QuantizedVector q;
  q.codes.resize(v.size());
  q.scale = quantize_into(v, q.codes);
  return q;
}

std::vector<float> dequantize(const QuantizedVector& q) {
  std::vector<float> out(q.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(q.codes[i]) * q.scale / static_cast<float>(kQuantLevels);
  }
  return out;
}

float score_codes(std::span<const int8_t> codes, float scale, std::span<const float> b) noexcept {
  std::array<float, 16> acc{};
  const std::size_t n = codes.size();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    for (std::size_t l = 0; l < 16; ++l) acc[l] += static_cast<float>(codes[i + l]) * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += static_cast<float>(codes[i]) * b[i];
  float sum = tail;
  for (std::size_t w = 16; w > 1; w /= 2) {
    for (std::size_t l = 0; l < w / 2; ++l) acc[l] += acc[l + w / 2];
  }
  sum += acc[0];
  return sum * scale / static_cast<float>(kQuantLevels);
}

float score_quantized(const QuantizedVector& a, std::span<const float> b) {
  if (a.codes.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "quantized vector has dim " +
                                                   std::to_string(a.codes.size()) + ", query has " +
                                                   std::to_string(b.size()));
  }
  return score_codes(a.codes, a.scale, b);
}

}  // namespace latentlens
