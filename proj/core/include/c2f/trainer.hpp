#pragma once

// Deterministic pre-training loop: warmup+cosine learning-rate schedule,
// decoupled-weight-decay adaptive-moment optimizer, per-step progressive
// masking, line-delimited metrics, and a binary checkpoint format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c2f/masking.hpp"
#include "c2f/model.hpp"
#include "c2f/objective.hpp"
#include "c2f/synthdata.hpp"

namespace c2f::train {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 32;
  // Peak learning rate is base_lr scaled by batch_size / 256.
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  std::optional<double> grad_clip;  // global-norm threshold; unset = no clipping
  std::uint64_t seed = 0;
  model::DecoderMode decoder_mode = model::DecoderMode::Cascaded;
  mask::MaskMode masking_mode = mask::MaskMode::Progressive;
  obj::LossWeights loss_weights;

  double peak_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }

  void validate() const {
    if (epochs == 0) throw ContractError("train config: epochs must be at least 1");
    if (batch_size == 0) throw ContractError("train config: batch_size must be at least 1");
    if (warmup_epochs > epochs)
      throw ContractError("train config: warmup_epochs " + std::to_string(warmup_epochs) +
                          " exceeds epochs " + std::to_string(epochs));
    if (!(base_lr > 0.0)) throw ContractError("train config: base_lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ContractError("train config: betas must lie in [0, 1)");
    if (weight_decay < 0.0) throw ContractError("train config: weight_decay must be nonnegative");
    if (grad_clip && !(*grad_clip > 0.0))
      throw ContractError("train config: grad_clip must be positive when set");
    loss_weights.validate();
  }
};

// Linear warmup 0 -> peak over warmup_steps, then cosine decay peak -> 0 at
// total_steps. Steps are 0-based; step == warmup_steps yields the peak.
inline double lr_at(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                    double peak_lr) {
  if (total_steps == 0) throw ContractError("lr schedule: total_steps must be positive");
  if (warmup_steps > total_steps)
    throw ContractError("lr schedule: warmup " + std::to_string(warmup_steps) +
                        " exceeds total " + std::to_string(total_steps));
  if (step < warmup_steps)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  const double progress = total_steps == warmup_steps
                              ? 1.0
                              : static_cast<double>(step - warmup_steps) /
                                    static_cast<double>(total_steps - warmup_steps);
  return 0.5 * peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

// Adaptive-moment state, keyed by parameter name so checkpoints stay valid
// across enumeration-order changes.
template <typename T>
struct OptimState {
  std::size_t step = 0;  // completed optimizer steps
  std::map<std::string, std::vector<T>> first_moment;
  std::map<std::string, std::vector<T>> second_moment;
};

inline constexpr double kAdamEpsilon = 1e-8;

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm.
template <typename T>
double clip_gradients(model::ModelParams<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("gradient clip threshold must be positive");
  double sum_sq = 0.0;
  model::for_each_param(params, [&](const std::string&, num::Tensor<T>& t) {
    for (T g : t.grad()) sum_sq += static_cast<double>(g) * static_cast<double>(g);
  });
  const double norm = std::sqrt(sum_sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    model::for_each_param(params, [&](const std::string&, num::Tensor<T>& t) {
      for (T& g : t.grad_mut()) g *= factor;
    });
  }
  return norm;
}

// One decoupled-weight-decay moment update over every parameter. Decay skips
// norm gains, biases, and the mask token. Missing gradients count as zero.
template <typename T>
void optimizer_step(model::ModelParams<T>& params, OptimState<T>& state, double lr,
                    const TrainConfig& cfg) {
  state.step += 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  model::for_each_param(params, [&](const std::string& name, num::Tensor<T>& t) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) m.assign(t.size(), T(0));
    if (v.empty()) v.assign(t.size(), T(0));
    if (m.size() != t.size() || v.size() != t.size())
      throw ContractError("optimizer: moment buffers for '" + name +
                          "' do not match the parameter shape");
    const bool decay = !model::excluded_from_weight_decay(name);
    auto values = t.values_mut();
    const auto grad = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      if (!std::isfinite(g))
        throw NumericError("optimizer: non-finite gradient in '" + name + "'");
      const double m_new = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double v_new = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(m_new);
      v[i] = static_cast<T>(v_new);
      const double m_hat = m_new / bias1;
      const double v_hat = v_new / bias2;
      const double p = static_cast<double>(values[i]);
      double updated = p - lr * (m_hat / (std::sqrt(v_hat) + kAdamEpsilon));
      if (decay) updated -= lr * cfg.weight_decay * p;
      values[i] = static_cast<T>(updated);
    }
  });
}

struct StepMetrics {
  std::size_t step = 0;  // 0-based optimizer step index
  double lr = 0.0;
  double alpha_instance = 0.0;
  double alpha_semantic = 0.0;
  double loss_semantic = 0.0;
  double loss_instance = 0.0;
  double loss_rgb = 0.0;
  double total = 0.0;
};

// One optimizer step over a batch: per-sample mask plans at curriculum
// fraction u = step/total, forward, batch-mean losses, backward, update.
// The train config's decoder and masking modes override the section configs.
template <typename T>
StepMetrics train_step(const std::vector<synth::MultiGranularSample>& dataset,
                       std::span<const std::size_t> batch, model::ModelParams<T>& params,
                       OptimState<T>& optim, std::size_t step_index, std::size_t warmup_steps,
                       std::size_t total_steps, const model::ModelConfig& model_cfg,
                       const mask::MaskConfig& mask_cfg, const TrainConfig& cfg,
                       const rng::Stream& run_root) {
  namespace n = c2f::num;
  cfg.validate();
  if (batch.empty()) throw ContractError("train step: batch is empty");
  if (step_index >= total_steps)
    throw ContractError("train step: step " + std::to_string(step_index) + " of " +
                        std::to_string(total_steps));

  auto effective_model = model_cfg;
  effective_model.decoder_mode = cfg.decoder_mode;
  auto effective_mask = mask_cfg;
  effective_mask.mode = cfg.masking_mode;

  const double u = static_cast<double>(step_index) / static_cast<double>(total_steps);
  const auto mask_root = run_root.child("mask").child(step_index);

  model::for_each_param(params, [](const std::string&, num::Tensor<T>& t) { t.zero_grad(); });

  StepMetrics metrics;
  metrics.step = step_index;
  num::Tensor<T> sum_semantic, sum_instance, sum_rgb;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t idx = batch[b];
    if (idx >= dataset.size())
      throw ContractError("train step: batch index " + std::to_string(idx) +
                          " outside dataset of " + std::to_string(dataset.size()));
    const auto& sample = dataset[idx];
    const auto layout = tok::TokenLayout::make(sample.image_size, effective_model.patch_size);
    const auto plan = mask::build_mask_plan(sample, effective_mask, layout, u, mask_root);
    if (b == 0) {
      metrics.alpha_instance = plan.alpha_instance;
      metrics.alpha_semantic = plan.alpha_semantic;
    }
    auto fwd = model::forward(sample, plan, params, effective_model);
    auto ls = obj::semantic_loss(fwd.predictions[0], fwd.patches.semantic_pixel_ids,
                                 plan.masks[0], effective_model.class_count);
    auto li = obj::instance_loss(fwd.predictions[1], fwd.patches.instance_pixel_ids,
                                 plan.masks[1], effective_model.max_instances);
    auto lr_term = obj::rgb_loss(fwd.predictions[2], fwd.patches.features[2], plan.masks[2]);
    sum_semantic = sum_semantic.defined() ? n::add(sum_semantic, ls) : ls;
    sum_instance = sum_instance.defined() ? n::add(sum_instance, li) : li;
    sum_rgb = sum_rgb.defined() ? n::add(sum_rgb, lr_term) : lr_term;
  }

  const T inv = T(1) / static_cast<T>(batch.size());
  auto mean_semantic = n::scale(sum_semantic, inv);
  auto mean_instance = n::scale(sum_instance, inv);
  auto mean_rgb = n::scale(sum_rgb, inv);
  auto total = obj::total_loss(mean_semantic, mean_instance, mean_rgb, cfg.loss_weights);

  metrics.loss_semantic = static_cast<double>(mean_semantic.item());
  metrics.loss_instance = static_cast<double>(mean_instance.item());
  metrics.loss_rgb = static_cast<double>(mean_rgb.item());
  metrics.total = static_cast<double>(total.item());
  if (!std::isfinite(metrics.total))
    throw NumericError("train step: non-finite loss at step " + std::to_string(step_index));

  n::backward(total);
  if (cfg.grad_clip) clip_gradients(params, *cfg.grad_clip);
  metrics.lr = lr_at(step_index, warmup_steps, total_steps, cfg.peak_lr());
  optimizer_step(params, optim, metrics.lr, cfg);
  return metrics;
}

// Everything needed to reproduce or continue a run.
template <typename T>
struct Checkpoint {
  synth::SceneConfig scene;
  mask::MaskConfig mask;
  model::ModelConfig model;
  TrainConfig train;
  model::ModelParams<T> params;
  OptimState<T> optim;
  std::size_t image_size = 0;  // layout the positional tables were built for
};

// Directory layout: manifest.json (names, shapes, dtype, offsets,
// format_version, config echo) + params.bin / optim.bin, little-endian raw
// element blobs in manifest order (optim.bin holds first then second moment
// per parameter). save -> load -> save is byte-identical.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<T>& ckpt);

// Throws IoError naming the first mismatch between the manifest and the
// model it implies (missing/extra/reshaped parameters, dtype, sizes).
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir);

struct TrainLoopResult {
  std::vector<StepMetrics> metrics;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_path;
};

// Full run: seeded init, per-epoch shuffles, ceil(n/batch) steps per epoch,
// metrics.jsonl line per step, final checkpoint under out_dir/checkpoint.
template <typename T>
TrainLoopResult train_loop(const std::vector<synth::MultiGranularSample>& dataset,
                           const synth::SceneConfig& scene_cfg,
                           const model::ModelConfig& model_cfg, const mask::MaskConfig& mask_cfg,
                           const TrainConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace c2f::train
