#pragma once

// Fixed token geometry: each granularity contributes N patch tokens, laid out
// as one 3N-token sequence in the order semantic, instance, rgb. Every module
// downstream (masking, decoder spans, predictors) indexes through this.

#include <cstddef>
#include <string>

#include "c2f/common.hpp"

namespace c2f::tok {

enum class Granularity : std::size_t { Semantic = 0, Instance = 1, Rgb = 2 };
inline constexpr std::size_t kGranularityCount = 3;
inline constexpr Granularity kGranularityOrder[kGranularityCount] = {
    Granularity::Semantic, Granularity::Instance, Granularity::Rgb};

inline std::size_t index_of(Granularity g) { return static_cast<std::size_t>(g); }

inline const char* name_of(Granularity g) {
  switch (g) {
    case Granularity::Semantic: return "semantic";
    case Granularity::Instance: return "instance";
    default: return "rgb";
  }
}

struct TokenLayout {
  std::size_t image_size = 0;
  std::size_t patch_size = 0;
  std::size_t patches_per_side = 0;
  std::size_t N = 0;  // patches per granularity

  static TokenLayout make(std::size_t image_size, std::size_t patch_size) {
    if (patch_size == 0 || image_size % patch_size != 0)
      throw ContractError("layout: image size " + std::to_string(image_size) +
                          " not divisible by patch size " + std::to_string(patch_size));
    TokenLayout l;
    l.image_size = image_size;
    l.patch_size = patch_size;
    l.patches_per_side = image_size / patch_size;
    l.N = l.patches_per_side * l.patches_per_side;
    return l;
  }

  std::size_t total_tokens() const { return kGranularityCount * N; }
  std::size_t span_begin(Granularity g) const { return index_of(g) * N; }
  std::size_t span_end(Granularity g) const { return (index_of(g) + 1) * N; }
  // Spatial patch index shared by the three granularities.
  std::size_t spatial_of(std::size_t absolute_position) const { return absolute_position % N; }
  Granularity granularity_of(std::size_t absolute_position) const {
    return static_cast<Granularity>(absolute_position / N);
  }
};

}  // namespace c2f::tok
