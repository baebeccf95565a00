#include "latentlens/vector_ops.hpp"

#include <array>
#include <cmath>

#include "latentlens/error.hpp"

namespace latentlens {

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dot of " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  // Eight independent lanes let the compiler vectorize without reassociating.
  std::array<float, 8> acc{};
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

float l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return static_cast<float>(std::sqrt(s));
}

float cosine(std::span<const float> a, std::span<const float> b) {
  const float na = l2_norm(a);
  const float nb = l2_norm(b);
  if (na == 0.0f || nb == 0.0f) {
    if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "cosine");
    return 0.0f;
  }
  return dot(a, b) / (na * nb);
}

std::vector<float> normalized(std::span<const float> v) {
  const float n = l2_norm(v);
  if (!(n > 0.0f) || !std::isfinite(n)) {
    throw Error(ErrorCode::kDegenerateQuery, "vector has zero or non-finite norm");
  }
  std::vector<float> out(v.begin(), v.end());
  for (float& x : out) x /= n;
  return out;
}

bool all_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace latentlens
