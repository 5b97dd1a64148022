#include "c2f/trainer.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "c2f/run_config.hpp"
#include "json.hpp"

namespace c2f::train {
namespace {

using nlohmann::json;

template <typename T>
struct Dtype;
template <>
struct Dtype<float> {
  static constexpr const char* name = "f32";
  using Bits = std::uint32_t;
};
template <>
struct Dtype<double> {
  static constexpr const char* name = "f64";
  using Bits = std::uint64_t;
};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, std::span<const T> values) {
  using Bits = typename Dtype<T>::Bits;
  out.reserve(out.size() + values.size() * sizeof(Bits));
  for (T v : values) {
    const Bits bits = std::bit_cast<Bits>(v);
    for (std::size_t b = 0; b < sizeof(Bits); ++b)
      out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xFF));
  }
}

template <typename T>
std::vector<T> read_le(const std::vector<std::uint8_t>& blob, std::size_t byte_offset,
                       std::size_t count, const std::string& what) {
  using Bits = typename Dtype<T>::Bits;
  if (byte_offset > blob.size() || count > (blob.size() - byte_offset) / sizeof(Bits))
    throw IoError("checkpoint: " + what + " extends past the end of its blob");
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(Bits); ++b)
      bits |= static_cast<Bits>(blob[byte_offset + i * sizeof(Bits) + b]) << (8 * b);
    out[i] = std::bit_cast<T>(bits);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("checkpoint: failed writing " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("checkpoint: failed reading " + path.string());
  return bytes;
}

json metrics_to_json(const StepMetrics& m) {
  return json{{"step", m.step},
              {"lr", m.lr},
              {"alpha_instance", m.alpha_instance},
              {"alpha_semantic", m.alpha_semantic},
              {"loss_semantic", m.loss_semantic},
              {"loss_instance", m.loss_instance},
              {"loss_rgb", m.loss_rgb},
              {"total", m.total}};
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<T>& ckpt) {
  std::filesystem::create_directories(dir);

  auto params = ckpt.params;  // tensor handles; enumeration needs a mutable ref
  std::vector<std::uint8_t> params_blob, optim_blob;
  json entries = json::array();
  model::for_each_param(params, [&](const std::string& name, num::Tensor<T>& t) {
    json entry{{"name", name},
               {"shape", t.shape()},
               {"offset", params_blob.size()},
               {"optim_offset", optim_blob.size()}};
    append_le<T>(params_blob, t.values());
    const std::vector<T> zeros(t.size(), T(0));
    const auto mit = ckpt.optim.first_moment.find(name);
    const auto vit = ckpt.optim.second_moment.find(name);
    const auto& m = mit == ckpt.optim.first_moment.end() ? zeros : mit->second;
    const auto& v = vit == ckpt.optim.second_moment.end() ? zeros : vit->second;
    if (m.size() != t.size() || v.size() != t.size())
      throw ContractError("checkpoint: moment buffers for '" + name +
                          "' do not match the parameter shape");
    append_le<T>(optim_blob, std::span<const T>(m));
    append_le<T>(optim_blob, std::span<const T>(v));
    entries.push_back(std::move(entry));
  });

  const json manifest{
      {"format_version", 1},
      {"dtype", Dtype<T>::name},
      {"step", ckpt.optim.step},
      {"image_size", ckpt.image_size},
      {"config", json::parse(cfg::run_config_to_json(
                     cfg::RunConfig{ckpt.scene, ckpt.mask, ckpt.model, ckpt.train}))},
      {"parameters", entries}};
  const std::string manifest_text = manifest.dump(2) + "\n";

  write_file(dir / "manifest.json", manifest_text.data(), manifest_text.size());
  write_file(dir / "params.bin", params_blob.data(), params_blob.size());
  write_file(dir / "optim.bin", optim_blob.data(), optim_blob.size());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_bytes = read_file(dir / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::parse_error& e) {
    throw IoError("checkpoint: malformed manifest in " + dir.string() + ": " + e.what());
  }

  Checkpoint<T> ckpt;
  try {
    if (manifest.at("format_version").get<int>() != 1)
      throw IoError("checkpoint: unsupported format_version in " + dir.string());
    const auto dtype = manifest.at("dtype").get<std::string>();
    if (dtype != Dtype<T>::name)
      throw IoError("checkpoint: dtype is '" + dtype + "', expected '" + Dtype<T>::name + "'");

    const auto config = cfg::parse_run_config(manifest.at("config").dump());
    ckpt.scene = config.scene;
    ckpt.mask = config.mask;
    ckpt.model = config.model;
    ckpt.train = config.train;
    ckpt.image_size = manifest.at("image_size").get<std::size_t>();
    ckpt.optim.step = manifest.at("step").get<std::size_t>();

    const auto layout = tok::TokenLayout::make(ckpt.image_size, ckpt.model.patch_size);
    ckpt.params = model::init_params<T>(ckpt.model, layout, rng::Stream(0));

    const auto params_blob = read_file(dir / "params.bin");
    const auto optim_blob = read_file(dir / "optim.bin");

    std::map<std::string, num::Tensor<T>> expected;
    model::for_each_param(ckpt.params, [&](const std::string& name, num::Tensor<T>& t) {
      expected.emplace(name, t);
    });

    std::size_t param_bytes = 0, optim_bytes = 0;
    for (const auto& entry : manifest.at("parameters")) {
      const auto name = entry.at("name").get<std::string>();
      const auto it = expected.find(name);
      if (it == expected.end())
        throw IoError("checkpoint: manifest parameter '" + name + "' is not in the model");
      auto& tensor = it->second;
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape != tensor.shape())
        throw IoError("checkpoint: parameter '" + name + "' has shape " +
                      num::shape_str(shape) + ", the model expects " +
                      num::shape_str(tensor.shape()));
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto optim_offset = entry.at("optim_offset").get<std::size_t>();
      const auto values = read_le<T>(params_blob, offset, tensor.size(), "parameter '" + name + "'");
      std::copy(values.begin(), values.end(), tensor.values_mut().begin());
      ckpt.optim.first_moment[name] =
          read_le<T>(optim_blob, optim_offset, tensor.size(), "first moment of '" + name + "'");
      ckpt.optim.second_moment[name] =
          read_le<T>(optim_blob, optim_offset + tensor.size() * sizeof(T), tensor.size(),
                     "second moment of '" + name + "'");
      param_bytes += tensor.size() * sizeof(T);
      optim_bytes += 2 * tensor.size() * sizeof(T);
      expected.erase(it);
    }
    if (!expected.empty())
      throw IoError("checkpoint: manifest is missing parameter '" + expected.begin()->first +
                    "'");
    if (param_bytes != params_blob.size())
      throw IoError("checkpoint: params.bin holds " + std::to_string(params_blob.size()) +
                    " bytes, manifest describes " + std::to_string(param_bytes));
    if (optim_bytes != optim_blob.size())
      throw IoError("checkpoint: optim.bin holds " + std::to_string(optim_blob.size()) +
                    " bytes, manifest describes " + std::to_string(optim_bytes));
  } catch (const json::exception& e) {
    throw IoError("checkpoint: corrupt manifest in " + dir.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw IoError("checkpoint: corrupt manifest in " + dir.string() + ": " + e.what());
  }
  return ckpt;
}

template <typename T>
TrainLoopResult train_loop(const std::vector<synth::MultiGranularSample>& dataset,
                           const synth::SceneConfig& scene_cfg,
                           const model::ModelConfig& model_cfg, const mask::MaskConfig& mask_cfg,
                           const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  mask_cfg.validate();
  if (dataset.empty()) throw ContractError("train loop: dataset is empty");
  const std::size_t image_size = dataset.front().image_size;
  for (const auto& s : dataset)
    if (s.image_size != image_size || s.class_count != model_cfg.class_count)
      throw ContractError("train loop: sample " + std::to_string(s.index) +
                          " does not match the model geometry");
  const auto layout = tok::TokenLayout::make(image_size, model_cfg.patch_size);

  const std::size_t n = dataset.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;

  rng::Stream root(cfg.seed);
  auto params = model::init_params<T>(model_cfg, layout, root.child("init"));
  OptimState<T> optim;

  std::filesystem::create_directories(out_dir);
  const auto metrics_path = out_dir / "metrics.jsonl";
  std::ofstream metrics_file(metrics_path, std::ios::trunc);
  if (!metrics_file) throw IoError("train loop: cannot open " + metrics_path.string());

  TrainLoopResult result;
  result.metrics_path = metrics_path;
  result.metrics.reserve(total_steps);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = root.child("shuffle").child(epoch).permutation(n);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, n);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const std::size_t step_index = epoch * steps_per_epoch + b;
      const auto metrics = train_step(dataset, batch, params, optim, step_index, warmup_steps,
                                      total_steps, model_cfg, mask_cfg, cfg, root);
      metrics_file << metrics_to_json(metrics).dump() << "\n";
      result.metrics.push_back(metrics);
    }
  }
  metrics_file.flush();
  if (!metrics_file) throw IoError("train loop: failed writing " + metrics_path.string());

  result.checkpoint_dir = out_dir / "checkpoint";
  Checkpoint<T> ckpt{scene_cfg, mask_cfg,        model_cfg, cfg,
                     std::move(params), std::move(optim), image_size};
  save_checkpoint(result.checkpoint_dir, ckpt);
  return result;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);
template TrainLoopResult train_loop<float>(const std::vector<synth::MultiGranularSample>&,
                                           const synth::SceneConfig&, const model::ModelConfig&,
                                           const mask::MaskConfig&, const TrainConfig&,
                                           const std::filesystem::path&);
template TrainLoopResult train_loop<double>(const std::vector<synth::MultiGranularSample>&,
                                            const synth::SceneConfig&, const model::ModelConfig&,
                                            const mask::MaskConfig&, const TrainConfig&,
                                            const std::filesystem::path&);

}  // namespace c2f::train
