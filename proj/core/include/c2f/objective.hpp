#pragma once

// Reconstruction objective: cross-entropy over masked semantic and instance
// patches, mean squared error over masked RGB patches, and their weighted
// sum. Instance ids are first canonicalized by area rank so the class space
// has a fixed width.

#include <cstdint>
#include <string>
#include <vector>

#include "c2f/numerics.hpp"

namespace c2f::obj {

inline constexpr std::size_t kDefaultMaxInstances = 8;

struct LossWeights {
  double semantic = 1.0;
  double instance = 1.0;
  double rgb = 1.0;

  void validate() const {
    if (semantic < 0.0 || instance < 0.0 || rgb < 0.0)
      throw ContractError("loss weights must be nonnegative");
    if (semantic == 0.0 && instance == 0.0 && rgb == 0.0)
      throw ContractError("at least one loss weight must be positive");
  }
};

// Relabels instances to 1..min(K, max_instances) by descending pixel area
// (ties to the smaller original id); instances past the limit merge into the
// last label. Background 0 is preserved.
std::vector<std::uint16_t> canonicalize_instances(const std::vector<std::uint16_t>& instance_map,
                                                  std::size_t max_instances = kDefaultMaxInstances);

namespace detail {

// Row indices of masked (or all) patches. mask may be empty only when
// masked_only is false.
inline std::vector<std::size_t> selected_patches(const std::vector<std::uint8_t>& mask,
                                                 std::size_t patch_count, bool masked_only) {
  if (mask.size() != patch_count)
    throw ContractError("loss: mask length " + std::to_string(mask.size()) +
                        " does not match " + std::to_string(patch_count) + " patches");
  std::vector<std::size_t> rows;
  for (std::size_t p = 0; p < patch_count; ++p)
    if (!masked_only || mask[p]) rows.push_back(p);
  return rows;
}

}  // namespace detail

// Mean per-pixel cross-entropy over the masked patches of one granularity.
// logits: [N, P²·classes] patch-major; targets: N·P² per-pixel class ids.
template <typename T>
num::Tensor<T> pixel_class_loss(const num::Tensor<T>& logits, const std::vector<int>& targets,
                                const std::vector<std::uint8_t>& mask, std::size_t classes,
                                bool masked_only = true) {
  if (logits.rank() != 2 || logits.dim(1) % classes != 0)
    throw ContractError("loss: logits " + num::shape_str(logits.shape()) +
                        " not divisible into " + std::to_string(classes) + " classes");
  const std::size_t patch_count = logits.dim(0);
  const std::size_t pixels_per_patch = logits.dim(1) / classes;
  if (targets.size() != patch_count * pixels_per_patch)
    throw ContractError("loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(patch_count * pixels_per_patch) + " pixels");

  const auto rows = detail::selected_patches(mask, patch_count, masked_only);
  if (rows.empty()) return num::Tensor<T>::from_data({1}, {T(0)});

  std::vector<int> picked;
  picked.reserve(rows.size() * pixels_per_patch);
  for (std::size_t r : rows)
    for (std::size_t q = 0; q < pixels_per_patch; ++q)
      picked.push_back(targets[r * pixels_per_patch + q]);

  auto patch_logits = num::gather_rows(logits, rows);
  auto pixel_logits = num::reshape(patch_logits, {rows.size() * pixels_per_patch, classes});
  return num::cross_entropy_mean(pixel_logits, picked);
}

template <typename T>
num::Tensor<T> semantic_loss(const num::Tensor<T>& logits, const std::vector<int>& targets,
                             const std::vector<std::uint8_t>& mask, std::size_t class_count,
                             bool masked_only = true) {
  return pixel_class_loss(logits, targets, mask, class_count, masked_only);
}

template <typename T>
num::Tensor<T> instance_loss(const num::Tensor<T>& logits, const std::vector<int>& targets,
                             const std::vector<std::uint8_t>& mask,
                             std::size_t max_instances = kDefaultMaxInstances,
                             bool masked_only = true) {
  return pixel_class_loss(logits, targets, mask, max_instances + 1, masked_only);
}

// Mean squared error over every element of the masked patches.
template <typename T>
num::Tensor<T> rgb_loss(const num::Tensor<T>& pred, const num::Tensor<T>& target,
                        const std::vector<std::uint8_t>& mask, bool masked_only = true) {
  if (pred.shape() != target.shape() || pred.rank() != 2)
    throw ContractError("loss: rgb prediction " + num::shape_str(pred.shape()) +
                        " vs target " + num::shape_str(target.shape()));
  const auto rows = detail::selected_patches(mask, pred.dim(0), masked_only);
  if (rows.empty()) return num::Tensor<T>::from_data({1}, {T(0)});
  return num::mse_mean(num::gather_rows(pred, rows), num::gather_rows(target, rows));
}

template <typename T>
num::Tensor<T> total_loss(const num::Tensor<T>& loss_semantic, const num::Tensor<T>& loss_instance,
                          const num::Tensor<T>& loss_rgb, const LossWeights& weights) {
  weights.validate();
  auto weighted = num::scale(loss_semantic, static_cast<T>(weights.semantic));
  weighted = num::add(weighted, num::scale(loss_instance, static_cast<T>(weights.instance)));
  return num::add(weighted, num::scale(loss_rgb, static_cast<T>(weights.rgb)));
}

}  // namespace c2f::obj
