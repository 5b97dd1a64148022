#pragma once

// Progressive masking: a Dirichlet draw allocates the visible-token budget
// across the three granularities, three generators (semantic-guided,
// instance-guided, random) each propose a full mask at the granularity's
// masked count, and a scheduled blend picks the final top-k. Every mask has
// popcount exactly k by construction — counts never drift.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "c2f/layout.hpp"
#include "c2f/rng.hpp"
#include "c2f/synthdata.hpp"

namespace c2f::mask {

using tok::Granularity;
using tok::kGranularityCount;
using tok::TokenLayout;

// Visible-token counts per granularity; sums to the sampled budget.
struct RatioSample {
  std::array<std::size_t, kGranularityCount> visible_counts{};
};

// Final per-granularity masks. Convention everywhere: 1 = masked, 0 = visible.
struct MaskPlan {
  std::array<std::vector<std::uint8_t>, kGranularityCount> masks;
  std::array<std::size_t, kGranularityCount> masked_counts{};
  RatioSample ratio;
  double alpha_instance = 0.0;
  double alpha_semantic = 0.0;
};

struct ScheduleBreakpoint {
  double u = 0.0;  // training fraction
  double alpha_instance = 0.0;
  double alpha_semantic = 0.0;
};

struct ScheduleConfig {
  // Semantic guidance first, instance guidance next, pure random at the end.
  std::vector<ScheduleBreakpoint> breakpoints{
      {0.00, 0.0, 1.0}, {0.15, 0.0, 1.0}, {0.45, 1.0, 0.0},
      {0.60, 1.0, 0.0}, {0.90, 0.0, 0.0}, {1.00, 0.0, 0.0}};

  void validate() const;
};

enum class MaskMode { Progressive, Random, Semantic, Instance };

struct MaskConfig {
  // Visible tokens across all granularities; defaults to 3N/6 (a 1/6 keep
  // rate) when unset.
  std::optional<std::size_t> visible_budget;
  double object_emphasis = 0.75;         // fraction of masked tokens aimed at objects
  std::vector<double> class_weights;     // empty = all classes equal
  double dirichlet_concentration = 1.0;
  double object_patch_threshold = 0.25;  // object-pixel fraction that flags a patch
  ScheduleConfig schedule;
  MaskMode mode = MaskMode::Progressive;

  std::size_t resolved_budget(const TokenLayout& layout) const {
    return visible_budget ? *visible_budget : layout.total_tokens() / 6;
  }
  void validate() const;
};

// Dirichlet-allocated visible counts, integerized by largest remainder and
// clamped to [0, N] per granularity with the overflow redistributed.
RatioSample sample_visible_budget(rng::Stream stream, std::size_t total_visible,
                                  std::size_t tokens_per_granularity,
                                  double concentration = 1.0);

// Majority pixel class per patch (ties to the smaller class id).
std::vector<int> patch_semantic_labels(const synth::MultiGranularSample& sample,
                                       std::size_t patch_size);
// True where the object-pixel fraction reaches the threshold.
std::vector<std::uint8_t> patch_object_flags(const synth::MultiGranularSample& sample,
                                             std::size_t patch_size, double threshold);

std::vector<std::uint8_t> semantic_guided_mask(const std::vector<int>& labels,
                                               std::size_t masked_count,
                                               const std::vector<double>& class_weights,
                                               rng::Stream stream);

std::vector<std::uint8_t> instance_guided_mask(const std::vector<std::uint8_t>& object_flags,
                                               std::size_t masked_count,
                                               double object_emphasis, rng::Stream stream);

std::vector<std::uint8_t> random_mask(std::size_t length, std::size_t masked_count,
                                      rng::Stream stream);

// Piecewise-linear (alpha_instance, alpha_semantic) at training fraction u.
std::pair<double, double> schedule_alphas(double u, const ScheduleConfig& cfg);

// Blend the three masks into scores and keep the top masked_count positions;
// ties resolved by rank in a seeded permutation.
std::vector<std::uint8_t> compose_progressive_mask(
    const std::vector<std::uint8_t>& random_m, const std::vector<std::uint8_t>& instance_m,
    const std::vector<std::uint8_t>& semantic_m, double alpha_instance, double alpha_semantic,
    std::size_t masked_count, rng::Stream stream);

// Full per-sample pipeline. Deterministic in (rng_root, sample.index, u).
MaskPlan build_mask_plan(const synth::MultiGranularSample& sample, const MaskConfig& cfg,
                         const TokenLayout& layout, double u, const rng::Stream& rng_root);

// Per-granularity 0/1 arrays, counts, and alphas for visualization.
std::string mask_plan_to_json(const MaskPlan& plan);

}  // namespace c2f::mask
