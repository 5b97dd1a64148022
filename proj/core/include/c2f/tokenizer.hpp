#pragma once

// Patch extraction and token plumbing: one-hot patch features per label
// granularity, fixed 2-D sine-cosine positional embeddings shared across
// granularities, visible-token gathering in span order, and the inverse
// scatter that re-inserts mask tokens at masked positions.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "c2f/layout.hpp"
#include "c2f/masking.hpp"
#include "c2f/numerics.hpp"
#include "c2f/objective.hpp"
#include "c2f/synthdata.hpp"

namespace c2f::tok {

// Patch-major features and per-pixel integer targets for one sample.
template <typename T>
struct PatchSet {
  TokenLayout layout;
  std::size_t class_count = 0;
  std::size_t max_instances = 0;
  // features[g]: [N, width_g] with width S = P²·C, I = P²·(K_max+1), R = P²·3.
  std::array<num::Tensor<T>, kGranularityCount> features;
  std::vector<int> semantic_pixel_ids;  // N·P², patch-major row-major pixels
  std::vector<int> instance_pixel_ids;  // canonicalized, same ordering
};

template <typename T>
std::size_t feature_width(const PatchSet<T>& patches, Granularity g) {
  return patches.features[index_of(g)].dim(1);
}

// Splits the aligned maps into non-overlapping P×P patches, row-major. Label
// granularities are one-hot per pixel; RGB stays raw in [0,1].
template <typename T>
PatchSet<T> patchify(const synth::MultiGranularSample& sample, std::size_t patch_size,
                     std::size_t max_instances = obj::kDefaultMaxInstances) {
  const TokenLayout layout = TokenLayout::make(sample.image_size, patch_size);
  const std::size_t P = patch_size;
  const std::size_t side = layout.patches_per_side;
  const std::size_t pixels = P * P;
  const std::size_t C = sample.class_count;
  const std::size_t instance_classes = max_instances + 1;

  const auto canonical = obj::canonicalize_instances(sample.instance, max_instances);

  PatchSet<T> out;
  out.layout = layout;
  out.class_count = C;
  out.max_instances = max_instances;
  out.semantic_pixel_ids.resize(layout.N * pixels);
  out.instance_pixel_ids.resize(layout.N * pixels);

  std::vector<T> sem(layout.N * pixels * C, T(0));
  std::vector<T> ins(layout.N * pixels * instance_classes, T(0));
  std::vector<T> rgb(layout.N * pixels * 3);

  for (std::size_t p = 0; p < layout.N; ++p) {
    const std::size_t y0 = (p / side) * P;
    const std::size_t x0 = (p % side) * P;
    for (std::size_t dy = 0; dy < P; ++dy) {
      for (std::size_t dx = 0; dx < P; ++dx) {
        const std::size_t pixel = (y0 + dy) * sample.image_size + x0 + dx;
        const std::size_t q = p * pixels + dy * P + dx;  // patch-major pixel index
        const int sem_id = sample.semantic[pixel];
        const int ins_id = canonical[pixel];
        out.semantic_pixel_ids[q] = sem_id;
        out.instance_pixel_ids[q] = ins_id;
        sem[q * C + sem_id] = T(1);
        ins[q * instance_classes + ins_id] = T(1);
        for (std::size_t ch = 0; ch < 3; ++ch)
          rgb[q * 3 + ch] = static_cast<T>(sample.rgb[pixel * 3 + ch]);
      }
    }
  }

  out.features[index_of(Granularity::Semantic)] =
      num::Tensor<T>::from_data({layout.N, pixels * C}, std::move(sem));
  out.features[index_of(Granularity::Instance)] =
      num::Tensor<T>::from_data({layout.N, pixels * instance_classes}, std::move(ins));
  out.features[index_of(Granularity::Rgb)] =
      num::Tensor<T>::from_data({layout.N, pixels * 3}, std::move(rgb));
  return out;
}

// Fixed 2-D sine-cosine table over a square grid of n positions (n a perfect
// square, dim divisible by 4): half the channels encode the row coordinate,
// half the column, each as interleaved sin/cos frequency bands.
template <typename T>
num::Tensor<T> sincos_position_table(std::size_t n, std::size_t dim) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n)
    throw ContractError("positions: token count " + std::to_string(n) +
                        " is not a square grid");
  if (dim == 0 || dim % 4 != 0)
    throw ContractError("positions: embedding width " + std::to_string(dim) +
                        " must be divisible by 4");

  const std::size_t half = dim / 2;     // channels per axis
  const std::size_t bands = half / 2;   // frequency bands per axis
  std::vector<double> omega(bands);
  for (std::size_t i = 0; i < bands; ++i)
    omega[i] = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(bands));

  std::vector<T> table(n * dim);
  for (std::size_t p = 0; p < n; ++p) {
    const auto row = static_cast<double>(p / side);
    const auto col = static_cast<double>(p % side);
    T* out = table.data() + p * dim;
    for (std::size_t i = 0; i < bands; ++i) {
      out[i] = static_cast<T>(std::sin(row * omega[i]));
      out[bands + i] = static_cast<T>(std::cos(row * omega[i]));
      out[half + i] = static_cast<T>(std::sin(col * omega[i]));
      out[half + bands + i] = static_cast<T>(std::cos(col * omega[i]));
    }
  }
  return num::Tensor<T>::from_data({n, dim}, std::move(table));
}

// Linear projection of patch features plus the positional term.
template <typename T>
num::Tensor<T> embed(const num::Tensor<T>& patches, const num::Tensor<T>& projection,
                     const num::Tensor<T>& bias, const num::Tensor<T>& positions) {
  if (patches.rank() != 2 || projection.rank() != 2 || patches.dim(1) != projection.dim(0))
    throw ContractError("embed: features " + num::shape_str(patches.shape()) +
                        " do not match projection " + num::shape_str(projection.shape()));
  if (positions.shape() != num::Shape{patches.dim(0), projection.dim(1)})
    throw ContractError("embed: positional table " + num::shape_str(positions.shape()) +
                        " does not match output shape");
  return num::add(num::linear(patches, projection, bias), positions);
}

template <typename T>
struct TokenBatch {
  num::Tensor<T> tokens;                      // [L, D]
  std::vector<std::size_t> source_positions;  // strictly increasing, in [0, 3N)
};

// Absolute visible positions of a plan, in span order S, I, R.
inline std::vector<std::size_t> visible_positions(const mask::MaskPlan& plan,
                                                  const TokenLayout& layout) {
  std::vector<std::size_t> positions;
  for (Granularity g : kGranularityOrder) {
    const auto& m = plan.masks[index_of(g)];
    if (m.size() != layout.N)
      throw ContractError("gather: mask length " + std::to_string(m.size()) +
                          " does not match " + std::to_string(layout.N) + " patches");
    for (std::size_t p = 0; p < m.size(); ++p)
      if (!m[p]) positions.push_back(layout.span_begin(g) + p);
  }
  return positions;
}

// Keeps the unmasked rows of the three embedded granularities, concatenated
// in span order.
template <typename T>
TokenBatch<T> gather_visible(const std::array<num::Tensor<T>, kGranularityCount>& embedded,
                             const mask::MaskPlan& plan, const TokenLayout& layout) {
  for (Granularity g : kGranularityOrder) {
    const auto& e = embedded[index_of(g)];
    if (e.rank() != 2 || e.dim(0) != layout.N)
      throw ContractError("gather: embedding for " + std::string(name_of(g)) +
                          " must have " + std::to_string(layout.N) + " rows");
  }
  TokenBatch<T> batch;
  batch.source_positions = visible_positions(plan, layout);
  auto full = num::concat_rows<T>({embedded[0], embedded[1], embedded[2]});
  batch.tokens = num::gather_rows(full, batch.source_positions);
  return batch;
}

// Rebuilds the 3N-token sequence: visible rows are the batch tokens placed at
// their source positions (bit-exact); every other row is the mask token plus
// the positional term of that absolute position.
template <typename T>
num::Tensor<T> scatter_full(const TokenBatch<T>& batch, const num::Tensor<T>& mask_token,
                            const TokenLayout& layout, const num::Tensor<T>& positions) {
  const std::size_t total = layout.total_tokens();
  if (mask_token.rank() != 1)
    throw ContractError("scatter: mask token must be a vector");
  const std::size_t d = mask_token.dim(0);
  if (positions.shape() != num::Shape{layout.N, d})
    throw ContractError("scatter: positional table " + num::shape_str(positions.shape()) +
                        " does not match layout/width");
  for (std::size_t i = 0; i < batch.source_positions.size(); ++i) {
    if (batch.source_positions[i] >= total)
      throw ContractError("scatter: source position " +
                          std::to_string(batch.source_positions[i]) + " outside [0," +
                          std::to_string(total) + ")");
    if (i > 0 && batch.source_positions[i] <= batch.source_positions[i - 1])
      throw ContractError("scatter: duplicate or unsorted source positions");
  }

  // Mask rows for all 3N positions: positional table tiled per granularity,
  // shifted by the shared mask token. Visible rows then replace theirs.
  auto tiled = num::concat_rows<T>({positions, positions, positions});
  auto base = num::add_bias(tiled, mask_token);
  return num::scatter_rows_into(batch.tokens, batch.source_positions, base);
}

}  // namespace c2f::tok
