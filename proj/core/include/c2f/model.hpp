#pragma once

// Masked-autoencoder model: a shared pre-norm ViT encoder over the visible
// tokens of all three granularities, and a three-stage decoder in which each
// stage queries its task's span and cross-attends to the full assembled
// sequence with the previous stage's output fused back in at that task's
// positions. A parallel decoder mode (no inter-stage fusion) serves as the
// ablation baseline. Task-specific linear predictors emit per-patch logits.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c2f/layout.hpp"
#include "c2f/masking.hpp"
#include "c2f/numerics.hpp"
#include "c2f/objective.hpp"
#include "c2f/rng.hpp"
#include "c2f/synthdata.hpp"
#include "c2f/tokenizer.hpp"

namespace c2f::model {

using tok::Granularity;
using tok::kGranularityCount;
using tok::kGranularityOrder;
using tok::TokenLayout;

enum class DecoderMode { Cascaded, Parallel };

struct ModelConfig {
  std::size_t patch_size = 8;
  std::size_t class_count = 5;
  std::size_t max_instances = obj::kDefaultMaxInstances;

  std::size_t enc_width = 64;
  std::size_t enc_depth = 4;
  std::size_t enc_heads = 4;

  std::size_t dec_width = 32;
  std::size_t dec_heads = 4;
  std::size_t dec_subblocks_per_stage = 1;
  std::size_t ffn_ratio = 4;

  std::array<Granularity, kGranularityCount> task_order{
      Granularity::Semantic, Granularity::Instance, Granularity::Rgb};
  DecoderMode decoder_mode = DecoderMode::Cascaded;

  // Flattened patch-feature width feeding a granularity's input projection;
  // also that granularity's predictor output width.
  std::size_t feature_width(Granularity g) const {
    const std::size_t pixels = patch_size * patch_size;
    switch (g) {
      case Granularity::Semantic: return pixels * class_count;
      case Granularity::Instance: return pixels * (max_instances + 1);
      default: return pixels * 3;
    }
  }

  void validate() const {
    if (patch_size == 0 || class_count == 0 || max_instances == 0)
      throw ContractError("model: patch size, class count, and max instances must be positive");
    if (enc_heads == 0 || dec_heads == 0 || enc_width % enc_heads != 0 ||
        dec_width % dec_heads != 0)
      throw ContractError("model: widths must divide evenly into heads");
    if (enc_width % 4 != 0 || dec_width % 4 != 0)
      throw ContractError("model: widths must be divisible by 4 for the positional tables");
    if (ffn_ratio == 0 || dec_subblocks_per_stage == 0)
      throw ContractError("model: ffn_ratio and dec_subblocks_per_stage must be positive");
    std::array<bool, kGranularityCount> seen{};
    for (Granularity g : task_order) seen[tok::index_of(g)] = true;
    if (!(seen[0] && seen[1] && seen[2]))
      throw ContractError("model: task_order must be a permutation of the granularities");
  }
};

template <typename T>
struct NormParams {
  num::Tensor<T> gain, bias;
};

// The key projection carries no bias: softmax is invariant to a per-query
// constant shift, so a key bias would be a dead parameter.
template <typename T>
struct AttentionParams {
  num::Tensor<T> query_weight, query_bias;
  num::Tensor<T> key_weight;
  num::Tensor<T> value_weight, value_bias;
  num::Tensor<T> out_weight, out_bias;
};

template <typename T>
struct FfnParams {
  num::Tensor<T> expand_weight, expand_bias;
  num::Tensor<T> project_weight, project_bias;
};

template <typename T>
struct EncoderBlockParams {
  NormParams<T> attn_norm;
  AttentionParams<T> attn;
  NormParams<T> ffn_norm;
  FfnParams<T> ffn;
};

template <typename T>
struct DecoderSubblockParams {
  NormParams<T> self_norm;
  AttentionParams<T> self_attn;
  NormParams<T> query_norm;
  NormParams<T> context_norm;
  AttentionParams<T> cross_attn;
  NormParams<T> ffn_norm;
  FfnParams<T> ffn;
};

template <typename T>
struct ModelParams {
  std::array<num::Tensor<T>, kGranularityCount> input_weight, input_bias;
  std::vector<EncoderBlockParams<T>> encoder;
  num::Tensor<T> bridge_weight, bridge_bias;  // encoder width -> decoder width
  num::Tensor<T> mask_token;
  std::array<std::vector<DecoderSubblockParams<T>>, kGranularityCount> decoder;
  std::array<num::Tensor<T>, kGranularityCount> predictor_weight, predictor_bias;
  // Fixed sine-cosine tables; buffers, not trainable parameters.
  num::Tensor<T> encoder_positions, decoder_positions;
};

namespace detail {

template <typename T, typename F>
void visit_norm(NormParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".gain", p.gain);
  fn(prefix + ".bias", p.bias);
}

template <typename T, typename F>
void visit_attention(AttentionParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".query.weight", p.query_weight);
  fn(prefix + ".query.bias", p.query_bias);
  fn(prefix + ".key.weight", p.key_weight);
  fn(prefix + ".value.weight", p.value_weight);
  fn(prefix + ".value.bias", p.value_bias);
  fn(prefix + ".out.weight", p.out_weight);
  fn(prefix + ".out.bias", p.out_bias);
}

template <typename T, typename F>
void visit_ffn(FfnParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".expand.weight", p.expand_weight);
  fn(prefix + ".expand.bias", p.expand_bias);
  fn(prefix + ".project.weight", p.project_weight);
  fn(prefix + ".project.bias", p.project_bias);
}

}  // namespace detail

// Deterministic enumeration of every trainable parameter as (name, tensor).
// Names are stable identifiers used for initialization streams, optimizer
// state, weight-decay exclusions, and checkpoint layout.
template <typename T, typename F>
void for_each_param(ModelParams<T>& params, F&& fn) {
  for (Granularity g : kGranularityOrder) {
    const std::string base = std::string("input.") + tok::name_of(g);
    fn(base + ".weight", params.input_weight[tok::index_of(g)]);
    fn(base + ".bias", params.input_bias[tok::index_of(g)]);
  }
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    const std::string base = "encoder." + std::to_string(i);
    auto& block = params.encoder[i];
    detail::visit_norm(block.attn_norm, base + ".attn_norm", fn);
    detail::visit_attention(block.attn, base + ".attn", fn);
    detail::visit_norm(block.ffn_norm, base + ".ffn_norm", fn);
    detail::visit_ffn(block.ffn, base + ".ffn", fn);
  }
  fn("bridge.weight", params.bridge_weight);
  fn("bridge.bias", params.bridge_bias);
  fn("mask_token", params.mask_token);
  for (Granularity g : kGranularityOrder) {
    auto& stages = params.decoder[tok::index_of(g)];
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string base =
          std::string("decoder.") + tok::name_of(g) + "." + std::to_string(i);
      auto& sb = stages[i];
      detail::visit_norm(sb.self_norm, base + ".self_norm", fn);
      detail::visit_attention(sb.self_attn, base + ".self_attn", fn);
      detail::visit_norm(sb.query_norm, base + ".query_norm", fn);
      detail::visit_norm(sb.context_norm, base + ".context_norm", fn);
      detail::visit_attention(sb.cross_attn, base + ".cross_attn", fn);
      detail::visit_norm(sb.ffn_norm, base + ".ffn_norm", fn);
      detail::visit_ffn(sb.ffn, base + ".ffn", fn);
    }
  }
  for (Granularity g : kGranularityOrder) {
    const std::string base = std::string("predictor.") + tok::name_of(g);
    fn(base + ".weight", params.predictor_weight[tok::index_of(g)]);
    fn(base + ".bias", params.predictor_bias[tok::index_of(g)]);
  }
}

// Layer-norm gains, every bias, and the mask token train without weight decay.
inline bool excluded_from_weight_decay(const std::string& name) {
  return name.ends_with(".gain") || name.ends_with(".bias") || name == "mask_token";
}

namespace detail {

template <typename T>
void allocate_params(ModelParams<T>& p, const ModelConfig& cfg) {
  using num::Tensor;
  const std::size_t de = cfg.enc_width, dd = cfg.dec_width;
  for (Granularity g : kGranularityOrder) {
    const std::size_t gi = tok::index_of(g);
    const std::size_t w = cfg.feature_width(g);
    p.input_weight[gi] = Tensor<T>::zeros({w, de});
    p.input_bias[gi] = Tensor<T>::zeros({de});
    p.predictor_weight[gi] = Tensor<T>::zeros({dd, w});
    p.predictor_bias[gi] = Tensor<T>::zeros({w});
  }
  auto norm = [](std::size_t d) {
    return NormParams<T>{Tensor<T>::zeros({d}), Tensor<T>::zeros({d})};
  };
  auto attention = [](std::size_t d) {
    return AttentionParams<T>{Tensor<T>::zeros({d, d}), Tensor<T>::zeros({d}),
                              Tensor<T>::zeros({d, d}),
                              Tensor<T>::zeros({d, d}), Tensor<T>::zeros({d}),
                              Tensor<T>::zeros({d, d}), Tensor<T>::zeros({d})};
  };
  auto ffn = [&](std::size_t d) {
    const std::size_t hidden = d * cfg.ffn_ratio;
    return FfnParams<T>{Tensor<T>::zeros({d, hidden}), Tensor<T>::zeros({hidden}),
                        Tensor<T>::zeros({hidden, d}), Tensor<T>::zeros({d})};
  };
  p.encoder.resize(cfg.enc_depth);
  for (auto& block : p.encoder)
    block = EncoderBlockParams<T>{norm(de), attention(de), norm(de), ffn(de)};
  p.bridge_weight = Tensor<T>::zeros({de, dd});
  p.bridge_bias = Tensor<T>::zeros({dd});
  p.mask_token = Tensor<T>::zeros({dd});
  for (Granularity g : kGranularityOrder) {
    auto& stages = p.decoder[tok::index_of(g)];
    stages.resize(cfg.dec_subblocks_per_stage);
    for (auto& sb : stages)
      sb = DecoderSubblockParams<T>{norm(dd),     attention(dd), norm(dd), norm(dd),
                                    attention(dd), norm(dd),      ffn(dd)};
  }
}

}  // namespace detail

// Fresh parameters: unit layer-norm gains, zero biases, and 0.02-scaled
// normal weights, each tensor drawn from a stream keyed by its name so the
// result is independent of enumeration order.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, const TokenLayout& layout,
                           const rng::Stream& root) {
  cfg.validate();
  ModelParams<T> p;
  detail::allocate_params(p, cfg);
  for_each_param(p, [&](const std::string& name, num::Tensor<T>& t) {
    auto values = t.values_mut();
    if (name.ends_with(".gain")) {
      for (auto& v : values) v = T(1);
    } else if (name.ends_with(".bias")) {
      // zeros already
    } else {
      auto s = root.child(name);
      for (auto& v : values) v = static_cast<T>(0.02 * s.next_normal());
    }
    t.node()->requires_grad = true;
  });
  p.encoder_positions = tok::sincos_position_table<T>(layout.N, cfg.enc_width);
  p.decoder_positions = tok::sincos_position_table<T>(layout.N, cfg.dec_width);
  return p;
}

// Post-softmax attention weights recorded per encoder layer, each [heads, L, L].
template <typename T>
struct AttentionCapture {
  std::vector<num::Tensor<T>> layers;
};

namespace detail {

template <typename T>
num::Tensor<T> multihead_attention(const num::Tensor<T>& queries_in,
                                   const num::Tensor<T>& context_in,
                                   const AttentionParams<T>& p, std::size_t heads,
                                   num::Tensor<T>* capture = nullptr) {
  namespace n = c2f::num;
  const std::size_t L = queries_in.dim(0);
  const std::size_t M = context_in.dim(0);
  const std::size_t d = queries_in.dim(1);
  const std::size_t head_dim = d / heads;

  auto q = n::swap01(n::reshape(n::linear(queries_in, p.query_weight, p.query_bias),
                                {L, heads, head_dim}));
  auto k = n::swap01(n::reshape(n::matmul(context_in, p.key_weight), {M, heads, head_dim}));
  auto v = n::swap01(n::reshape(n::linear(context_in, p.value_weight, p.value_bias),
                                {M, heads, head_dim}));

  auto scores = n::scale(n::matmul(q, n::transpose_last2(k)),
                         T(1) / std::sqrt(static_cast<T>(head_dim)));
  auto weights = n::softmax_lastdim(scores);  // [heads, L, M]
  if (capture) *capture = weights;
  auto ctx = n::reshape(n::swap01(n::matmul(weights, v)), {L, d});
  return n::linear(ctx, p.out_weight, p.out_bias);
}

template <typename T>
num::Tensor<T> feed_forward(const num::Tensor<T>& x, const FfnParams<T>& p) {
  namespace n = c2f::num;
  return n::linear(n::gelu(n::linear(x, p.expand_weight, p.expand_bias)), p.project_weight,
                   p.project_bias);
}

}  // namespace detail

// Pre-norm transformer encoder over the visible-token sequence. Depth zero is
// the identity. Output rows stay in input order.
template <typename T>
num::Tensor<T> encode(const num::Tensor<T>& tokens, const ModelParams<T>& params,
                      const ModelConfig& cfg, AttentionCapture<T>* capture = nullptr) {
  namespace n = c2f::num;
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.enc_width)
    throw ContractError("encode: tokens " + n::shape_str(tokens.shape()) + " do not match width " +
                        std::to_string(cfg.enc_width));
  if (tokens.dim(0) == 0) throw ContractError("encode: no visible tokens");
  if (params.encoder.size() != cfg.enc_depth)
    throw ContractError("encode: parameter depth " + std::to_string(params.encoder.size()) +
                        " does not match configured depth " + std::to_string(cfg.enc_depth));

  auto x = tokens;
  for (const auto& block : params.encoder) {
    auto normed = n::layer_norm(x, block.attn_norm.gain, block.attn_norm.bias);
    num::Tensor<T> weights;
    x = n::add(x, detail::multihead_attention(normed, normed, block.attn, cfg.enc_heads,
                                              capture ? &weights : nullptr));
    if (capture) capture->layers.push_back(weights);
    x = n::add(x, detail::feed_forward(n::layer_norm(x, block.ffn_norm.gain, block.ffn_norm.bias),
                                       block.ffn));
  }
  return x;
}

// Projects the encoded visible tokens to decoder width, scatters them to
// their absolute positions with the shared mask token elsewhere, and adds the
// decoder positional term to all 3N rows.
template <typename T>
num::Tensor<T> assemble_full_sequence(const num::Tensor<T>& encoded,
                                      const mask::MaskPlan& plan, const TokenLayout& layout,
                                      const ModelParams<T>& params) {
  namespace n = c2f::num;
  const auto positions = tok::visible_positions(plan, layout);
  if (encoded.rank() != 2 || encoded.dim(0) != positions.size())
    throw ContractError("assemble: " + std::to_string(encoded.dim(0)) + " encoded rows for " +
                        std::to_string(positions.size()) + " visible positions");
  auto projected = n::linear(encoded, params.bridge_weight, params.bridge_bias);
  auto placed = n::scatter_rows(projected, positions, layout.total_tokens(), params.mask_token);
  auto tiled = n::concat_rows<T>(
      {params.decoder_positions, params.decoder_positions, params.decoder_positions});
  return n::add(placed, tiled);
}

// Keys/values for one decoder stage: the assembled sequence with the previous
// stage's output added over that task's span. Rows outside the span are
// bit-identical to the input.
template <typename T>
num::Tensor<T> fuse_kv(const num::Tensor<T>& assembled, const num::Tensor<T>& previous_output,
                       std::size_t span_begin, std::size_t span_end, const TokenLayout& layout) {
  if (span_begin % layout.N != 0 || span_end != span_begin + layout.N ||
      span_end > layout.total_tokens())
    throw ContractError("fuse: span [" + std::to_string(span_begin) + "," +
                        std::to_string(span_end) + ") is not a granularity span");
  if (previous_output.rank() != 2 || previous_output.dim(0) != layout.N)
    throw ContractError("fuse: previous stage output must have one row per patch");
  return num::add_rows_span(assembled, previous_output, span_begin);
}

// One decoder stage: queries are the task's span of the assembled sequence;
// each sub-block runs self-attention, cross-attention against the fused
// sequence, and a feed-forward, all pre-norm residual.
template <typename T>
num::Tensor<T> decode_stage(const num::Tensor<T>& assembled, const num::Tensor<T>& fused,
                            Granularity task, const ModelParams<T>& params,
                            const ModelConfig& cfg, const TokenLayout& layout) {
  namespace n = c2f::num;
  auto q = n::slice_rows(assembled, layout.span_begin(task), layout.span_end(task));
  for (const auto& sb : params.decoder[tok::index_of(task)]) {
    auto self_normed = n::layer_norm(q, sb.self_norm.gain, sb.self_norm.bias);
    q = n::add(q, detail::multihead_attention(self_normed, self_normed, sb.self_attn,
                                              cfg.dec_heads));
    q = n::add(q, detail::multihead_attention(
                      n::layer_norm(q, sb.query_norm.gain, sb.query_norm.bias),
                      n::layer_norm(fused, sb.context_norm.gain, sb.context_norm.bias),
                      sb.cross_attn, cfg.dec_heads));
    q = n::add(q, detail::feed_forward(n::layer_norm(q, sb.ffn_norm.gain, sb.ffn_norm.bias),
                                       sb.ffn));
  }
  return q;
}

template <typename T>
struct ForwardResult {
  // Indexed by granularity: per-patch reconstruction logits/values.
  std::array<num::Tensor<T>, kGranularityCount> predictions;
  // Patch features and per-pixel targets, for the reconstruction losses.
  tok::PatchSet<T> patches;
};

// Full pipeline for one sample: patchify, embed, gather visible, encode,
// assemble, decode the three stages in task order, predict. Cascaded mode
// fuses each stage's output into the next stage's keys/values; parallel mode
// decodes every task directly from the assembled sequence.
template <typename T>
ForwardResult<T> forward(const synth::MultiGranularSample& sample, const mask::MaskPlan& plan,
                         const ModelParams<T>& params, const ModelConfig& cfg,
                         AttentionCapture<T>* capture = nullptr) {
  namespace n = c2f::num;
  cfg.validate();
  const auto layout = TokenLayout::make(sample.image_size, cfg.patch_size);
  if (sample.class_count != cfg.class_count)
    throw ContractError("forward: sample has " + std::to_string(sample.class_count) +
                        " classes, model expects " + std::to_string(cfg.class_count));
  if (params.encoder_positions.dim(0) != layout.N)
    throw ContractError("forward: positional tables were built for a different layout");

  ForwardResult<T> out;
  out.patches = tok::patchify<T>(sample, cfg.patch_size, cfg.max_instances);

  std::array<num::Tensor<T>, kGranularityCount> embedded;
  for (Granularity g : kGranularityOrder) {
    const std::size_t gi = tok::index_of(g);
    embedded[gi] = tok::embed(out.patches.features[gi], params.input_weight[gi],
                              params.input_bias[gi], params.encoder_positions);
  }
  const auto batch = tok::gather_visible(embedded, plan, layout);
  const auto encoded = encode(batch.tokens, params, cfg, capture);
  const auto assembled = assemble_full_sequence(encoded, plan, layout, params);

  num::Tensor<T> previous;  // undefined before the first stage
  Granularity previous_task = cfg.task_order[0];
  for (Granularity task : cfg.task_order) {
    num::Tensor<T> fused = assembled;
    if (cfg.decoder_mode == DecoderMode::Cascaded && previous.defined())
      fused = fuse_kv(assembled, previous, layout.span_begin(previous_task),
                      layout.span_end(previous_task), layout);
    auto stage = decode_stage(assembled, fused, task, params, cfg, layout);
    const std::size_t gi = tok::index_of(task);
    out.predictions[gi] =
        n::linear(stage, params.predictor_weight[gi], params.predictor_bias[gi]);
    previous = stage;
    previous_task = task;
  }
  return out;
}

// Post-softmax encoder attention for one layer and head, [N_vis, N_vis].
template <typename T>
num::Tensor<T> attention_maps(const synth::MultiGranularSample& sample,
                              const mask::MaskPlan& plan, const ModelParams<T>& params,
                              const ModelConfig& cfg, std::size_t layer, std::size_t head) {
  if (layer >= cfg.enc_depth)
    throw ContractError("attention: layer " + std::to_string(layer) + " out of range for depth " +
                        std::to_string(cfg.enc_depth));
  if (head >= cfg.enc_heads)
    throw ContractError("attention: head " + std::to_string(head) + " out of range for " +
                        std::to_string(cfg.enc_heads) + " heads");

  num::NoGradGuard no_grad;
  AttentionCapture<T> capture;
  (void)forward(sample, plan, params, cfg, &capture);
  const auto& weights = capture.layers.at(layer);  // [heads, L, L]
  const std::size_t L = weights.dim(1);
  std::vector<T> head_values(L * L);
  std::copy_n(weights.values().data() + head * L * L, L * L, head_values.data());
  return num::Tensor<T>::from_data({L, L}, std::move(head_values));
}

// JSON round-trip for exported attention maps.
struct AttentionMapData {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

std::string attention_map_to_json(const AttentionMapData& map);
AttentionMapData attention_map_from_json(const std::string& text);

}  // namespace c2f::model
