#pragma once

#include <span>
#include <vector>

namespace latentlens {

// Dense float helpers. All of them accumulate in a fixed order so results
// are reproducible across runs.

float dot(std::span<const float> a, std::span<const float> b);
float l2_norm(std::span<const float> v);

/// Cosine similarity; 0 when either side has zero norm.
float cosine(std::span<const float> a, std::span<const float> b);

/// Returns v / |v|. Throws Error(kDegenerateQuery) for a zero vector.
std::vector<float> normalized(std::span<const float> v);

bool all_finite(std::span<const float> v);

}  // namespace latentlens
