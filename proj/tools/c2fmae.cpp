// Command-line workbench: dataset generation, pre-training, reconstruction
// and attention exports, mask visualization, and a gradient self-check.
//
// Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
// 3 numeric failure (non-finite loss, failed gradient check).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "c2f/diagnostics.hpp"
#include "c2f/masking.hpp"
#include "c2f/model.hpp"
#include "c2f/numerics.hpp"
#include "c2f/objective.hpp"
#include "c2f/pnm.hpp"
#include "c2f/run_config.hpp"
#include "c2f/synthdata.hpp"
#include "c2f/tokenizer.hpp"
#include "c2f/trainer.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using c2f::ContractError;
using c2f::IoError;
using c2f::tok::Granularity;

// Reproducibility contract: every command prints its fully resolved
// configuration before doing any work.
void echo_invocation(const std::string& command, json args, const c2f::cfg::RunConfig* config) {
  json doc{{"command", command}, {"args", std::move(args)}};
  if (config) doc["config"] = json::parse(c2f::cfg::run_config_to_json(*config));
  std::cout << doc.dump(2) << "\n";
}

c2f::cfg::RunConfig resolve_config(const std::optional<std::string>& path) {
  if (path) return c2f::cfg::load_run_config(*path);
  return c2f::cfg::RunConfig{};
}

std::array<Granularity, c2f::tok::kGranularityCount> parse_task_order(const std::string& text) {
  if (text.size() != 3)
    throw ContractError("task order '" + text + "' must name all three granularities (e.g. SIR)");
  std::array<Granularity, c2f::tok::kGranularityCount> order{};
  std::array<bool, c2f::tok::kGranularityCount> seen{};
  for (std::size_t i = 0; i < 3; ++i) {
    Granularity g;
    switch (text[i]) {
      case 'S': case 's': g = Granularity::Semantic; break;
      case 'I': case 'i': g = Granularity::Instance; break;
      case 'R': case 'r': g = Granularity::Rgb; break;
      default:
        throw ContractError("task order '" + text + "': unknown granularity '" +
                            std::string(1, text[i]) + "'");
    }
    if (seen[c2f::tok::index_of(g)])
      throw ContractError("task order '" + text + "' repeats a granularity");
    seen[c2f::tok::index_of(g)] = true;
    order[i] = g;
  }
  return order;
}

struct Dataset {
  c2f::synth::DatasetManifest manifest;
  std::vector<c2f::synth::MultiGranularSample> samples;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset out;
  out.manifest = c2f::synth::load_manifest(dir);
  out.samples.reserve(out.manifest.sample_dirs.size());
  for (const auto& rel : out.manifest.sample_dirs)
    out.samples.push_back(c2f::synth::load_sample(dir / rel));
  return out;
}

const c2f::synth::MultiGranularSample& sample_at(const Dataset& data, std::size_t index) {
  if (index >= data.samples.size())
    throw ContractError("sample index " + std::to_string(index) + " outside dataset of " +
                        std::to_string(data.samples.size()));
  return data.samples[index];
}

std::string checkpoint_dtype(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return json::parse(buffer.str()).at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
}

template <typename F>
void with_checkpoint(const fs::path& dir, F&& fn) {
  const std::string dtype = checkpoint_dtype(dir);
  if (dtype == "f32")
    fn(c2f::train::load_checkpoint<float>(dir));
  else if (dtype == "f64")
    fn(c2f::train::load_checkpoint<double>(dir));
  else
    throw IoError("checkpoint " + dir.string() + ": unsupported dtype '" + dtype + "'");
}

// Pixel <-> patch coordinate bridge shared by the renderers.
struct PatchGrid {
  std::size_t image_size, P, side, pixels;
  PatchGrid(std::size_t image_size, std::size_t patch)
      : image_size(image_size), P(patch), side(image_size / patch), pixels(patch * patch) {}
  std::size_t patch(std::size_t y, std::size_t x) const { return (y / P) * side + x / P; }
  std::size_t offset(std::size_t y, std::size_t x) const { return (y % P) * P + x % P; }
};

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Per-pixel argmax over patch-major class logits, rendered as a label map.
template <typename T>
std::vector<std::size_t> argmax_labels(const c2f::num::Tensor<T>& logits, const PatchGrid& grid,
                                       std::size_t classes) {
  const auto vals = logits.values();
  const std::size_t width = grid.pixels * classes;
  std::vector<std::size_t> out(grid.image_size * grid.image_size);
  for (std::size_t y = 0; y < grid.image_size; ++y)
    for (std::size_t x = 0; x < grid.image_size; ++x) {
      const T* row = vals.data() + grid.patch(y, x) * width + grid.offset(y, x) * classes;
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      out[y * grid.image_size + x] = best;
    }
  return out;
}

template <typename Checkpoint>
void write_reconstruction(const Checkpoint& ckpt, const c2f::synth::MultiGranularSample& sample,
                          const c2f::mask::MaskPlan& plan, const fs::path& out_dir) {
  const auto& mcfg = ckpt.model;
  const PatchGrid grid(sample.image_size, mcfg.patch_size);
  const auto fwd = c2f::model::forward(sample, plan, ckpt.params, mcfg);
  fs::create_directories(out_dir);

  const auto masked = [&](Granularity g, std::size_t y, std::size_t x) {
    return plan.masks[c2f::tok::index_of(g)][grid.patch(y, x)] != 0;
  };
  const std::size_t n = sample.image_size;

  // Semantic: 8-bit label maps; masked input patches carry the sentinel 255.
  c2f::pnm::ImageU8 sem_target{n, n, 1, std::vector<std::uint8_t>(sample.semantic)};
  c2f::pnm::ImageU8 sem_masked = sem_target;
  c2f::pnm::ImageU8 sem_pred{n, n, 1, std::vector<std::uint8_t>(n * n)};
  const auto sem_labels = argmax_labels(fwd.predictions[0], grid, mcfg.class_count);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      sem_pred.data[y * n + x] = static_cast<std::uint8_t>(sem_labels[y * n + x]);
      if (masked(Granularity::Semantic, y, x)) sem_masked.data[y * n + x] = 255;
    }
  c2f::pnm::write_pgm8(out_dir / "semantic_target.pgm", sem_target);
  c2f::pnm::write_pgm8(out_dir / "semantic_masked.pgm", sem_masked);
  c2f::pnm::write_pgm8(out_dir / "semantic_pred.pgm", sem_pred);

  // Instance: 16-bit canonical ids; masked input patches carry 65535.
  const auto canonical = c2f::obj::canonicalize_instances(sample.instance, mcfg.max_instances);
  c2f::pnm::ImageU16 ins_target{n, n, canonical};
  c2f::pnm::ImageU16 ins_masked = ins_target;
  c2f::pnm::ImageU16 ins_pred{n, n, std::vector<std::uint16_t>(n * n)};
  const auto ins_labels = argmax_labels(fwd.predictions[1], grid, mcfg.max_instances + 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      ins_pred.data[y * n + x] = static_cast<std::uint16_t>(ins_labels[y * n + x]);
      if (masked(Granularity::Instance, y, x)) ins_masked.data[y * n + x] = 65535;
    }
  c2f::pnm::write_pgm16(out_dir / "instance_target.pgm", ins_target);
  c2f::pnm::write_pgm16(out_dir / "instance_masked.pgm", ins_masked);
  c2f::pnm::write_pgm16(out_dir / "instance_pred.pgm", ins_pred);

  // RGB: predictions clamped to [0,1]; masked input patches are black.
  c2f::pnm::ImageU8 rgb_target{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
  c2f::pnm::ImageU8 rgb_masked{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
  c2f::pnm::ImageU8 rgb_pred{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
  const auto pred_vals = fwd.predictions[2].values();
  const std::size_t rgb_width = grid.pixels * 3;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t pixel = y * n + x;
      const bool hide = masked(Granularity::Rgb, y, x);
      const auto* row =
          pred_vals.data() + grid.patch(y, x) * rgb_width + grid.offset(y, x) * 3;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::uint8_t original = to_byte(sample.rgb[pixel * 3 + ch]);
        rgb_target.data[pixel * 3 + ch] = original;
        rgb_masked.data[pixel * 3 + ch] = hide ? 0 : original;
        rgb_pred.data[pixel * 3 + ch] = to_byte(static_cast<double>(row[ch]));
      }
    }
  c2f::pnm::write_ppm8(out_dir / "rgb_target.ppm", rgb_target);
  c2f::pnm::write_ppm8(out_dir / "rgb_masked.ppm", rgb_masked);
  c2f::pnm::write_ppm8(out_dir / "rgb_pred.ppm", rgb_pred);
}

int run_gen_data(const std::optional<std::string>& config_path, std::size_t count,
                 const std::string& out, std::optional<std::uint64_t> seed) {
  auto rc = resolve_config(config_path);
  if (seed) rc.scene.seed = *seed;
  echo_invocation("gen-data", json{{"count", count}, {"out", out}}, &rc);
  const auto manifest = c2f::synth::generate_dataset(rc.scene, count, out);
  std::cout << "wrote " << manifest.sample_dirs.size() << " samples to " << out << "\n";
  return 0;
}

int run_pretrain(const std::optional<std::string>& config_path, const std::string& data,
                 const std::string& out, const std::optional<std::string>& decoder,
                 const std::optional<std::string>& masking,
                 const std::optional<std::string>& task_order) {
  auto rc = resolve_config(config_path);
  if (decoder) rc.train.decoder_mode = c2f::cfg::parse_decoder_mode(*decoder);
  if (masking) rc.train.masking_mode = c2f::cfg::parse_mask_mode(*masking);
  if (task_order) rc.model.task_order = parse_task_order(*task_order);
  const auto dataset = load_dataset(data);
  rc.scene = dataset.manifest.config;  // the data dictates its own geometry
  echo_invocation("pretrain", json{{"data", data}, {"out", out}}, &rc);

  const auto result =
      c2f::train::train_loop<float>(dataset.samples, rc.scene, rc.model, rc.mask, rc.train, out);
  const auto& last = result.metrics.back();
  std::cout << "trained " << result.metrics.size() << " steps; final total loss " << last.total
            << "\ncheckpoint: " << result.checkpoint_dir.string()
            << "\nmetrics: " << result.metrics_path.string() << "\n";
  return 0;
}

int run_reconstruct(const std::string& ckpt_dir, const std::string& data, std::size_t index,
                    const std::string& out) {
  const auto dataset = load_dataset(data);
  const auto& sample = sample_at(dataset, index);
  with_checkpoint(ckpt_dir, [&](const auto& ckpt) {
    c2f::cfg::RunConfig rc{ckpt.scene, ckpt.mask, ckpt.model, ckpt.train};
    echo_invocation("reconstruct",
                    json{{"ckpt", ckpt_dir}, {"data", data}, {"index", index}, {"out", out}},
                    &rc);
    const auto layout = c2f::tok::TokenLayout::make(sample.image_size, ckpt.model.patch_size);
    const auto plan = c2f::mask::build_mask_plan(
        sample, ckpt.mask, layout, 1.0,
        c2f::rng::Stream(ckpt.train.seed).child("reconstruct").child(index));
    write_reconstruction(ckpt, sample, plan, out);
    std::cout << "wrote reconstruction triplets to " << out << "\n";
  });
  return 0;
}

int run_attn(const std::string& ckpt_dir, const std::string& data, std::size_t index,
             std::size_t layer, std::size_t head, const std::string& out) {
  const auto dataset = load_dataset(data);
  const auto& sample = sample_at(dataset, index);
  with_checkpoint(ckpt_dir, [&](const auto& ckpt) {
    c2f::cfg::RunConfig rc{ckpt.scene, ckpt.mask, ckpt.model, ckpt.train};
    echo_invocation("attn",
                    json{{"ckpt", ckpt_dir},
                         {"data", data},
                         {"index", index},
                         {"layer", layer},
                         {"head", head},
                         {"out", out}},
                    &rc);
    const auto layout = c2f::tok::TokenLayout::make(sample.image_size, ckpt.model.patch_size);
    const auto plan = c2f::mask::build_mask_plan(
        sample, ckpt.mask, layout, 1.0,
        c2f::rng::Stream(ckpt.train.seed).child("reconstruct").child(index));
    const auto map =
        c2f::model::attention_maps(sample, plan, ckpt.params, ckpt.model, layer, head);

    // Gray export scaled so the strongest attention weight is white.
    const auto vals = map.values();
    double peak = 0.0;
    for (const auto v : vals) peak = std::max(peak, static_cast<double>(v));
    const std::size_t rows = map.dim(0);
    c2f::pnm::ImageU8 image{rows, rows, 1, std::vector<std::uint8_t>(rows * rows)};
    for (std::size_t i = 0; i < vals.size(); ++i)
      image.data[i] = to_byte(peak > 0.0 ? static_cast<double>(vals[i]) / peak : 0.0);
    c2f::pnm::write_pgm8(out, image);
    std::cout << "wrote " << rows << "x" << rows << " attention map to " << out << "\n";
  });
  return 0;
}

int run_grad_check(std::uint64_t seed) {
  echo_invocation("grad-check", json{{"seed", seed}}, nullptr);
  const auto report = c2f::diag::model_gradient_check(seed);
  std::cout << "max relative error " << report.max_rel_err << " over " << report.checked_elements
            << " elements (worst " << report.worst_param << "[" << report.worst_index
            << "] analytic " << report.analytic << " numeric " << report.numeric << ")\n";
  if (!(report.max_rel_err < 1e-4)) {
    std::cerr << "gradient check failed: " << report.max_rel_err << " >= 1e-4\n";
    return 3;
  }
  return 0;
}

int run_mask_viz(const std::optional<std::string>& config_path, const std::string& data,
                 std::size_t index, double u, const std::string& out) {
  auto rc = resolve_config(config_path);
  const auto dataset = load_dataset(data);
  const auto& sample = sample_at(dataset, index);
  echo_invocation("mask-viz", json{{"data", data}, {"index", index}, {"u", u}, {"out", out}},
                  &rc);

  const auto layout = c2f::tok::TokenLayout::make(sample.image_size, rc.model.patch_size);
  const auto plan = c2f::mask::build_mask_plan(
      sample, rc.mask, layout, u, c2f::rng::Stream(rc.train.seed).child("mask-viz").child(index));

  fs::create_directories(out);
  std::ofstream(fs::path(out) / "plan.json", std::ios::trunc)
      << c2f::mask::mask_plan_to_json(plan) << "\n";

  const PatchGrid grid(sample.image_size, rc.model.patch_size);
  const std::size_t n = sample.image_size;
  for (Granularity g : c2f::tok::kGranularityOrder) {
    const auto& mask = plan.masks[c2f::tok::index_of(g)];
    c2f::pnm::ImageU8 flat{n, n, 1, std::vector<std::uint8_t>(n * n)};
    c2f::pnm::ImageU8 overlay{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const bool hidden = mask[grid.patch(y, x)] != 0;
        flat.data[y * n + x] = hidden ? 0 : 255;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const std::uint8_t byte = to_byte(sample.rgb[(y * n + x) * 3 + ch]);
          overlay.data[(y * n + x) * 3 + ch] =
              hidden ? static_cast<std::uint8_t>(byte / 4) : byte;
        }
      }
    const std::string name = c2f::tok::name_of(g);
    c2f::pnm::write_pgm8(fs::path(out) / ("mask_" + name + ".pgm"), flat);
    c2f::pnm::write_ppm8(fs::path(out) / ("overlay_" + name + ".ppm"), overlay);
  }
  std::cout << "wrote mask plan and overlays to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine masked-autoencoder workbench"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-data
  std::optional<std::string> gen_config;
  std::size_t gen_count = 16;
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "generate an aligned tri-granular dataset");
  gen->add_option("--config", gen_config, "run config JSON (scene section applies)");
  gen->add_option("--count", gen_count, "number of samples")->capture_default_str();
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "override scene seed");
  gen->callback([&] { exit_code = run_gen_data(gen_config, gen_count, gen_out, gen_seed); });

  // pretrain
  std::optional<std::string> pre_config, pre_decoder, pre_masking, pre_order;
  std::string pre_data, pre_out;
  auto* pre = app.add_subcommand("pretrain", "pre-train on a generated dataset");
  pre->add_option("--config", pre_config, "run config JSON");
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--out", pre_out, "run output directory")->required();
  pre->add_option("--decoder", pre_decoder, "cascaded | parallel");
  pre->add_option("--masking", pre_masking, "progressive | random | semantic | instance");
  pre->add_option("--task-order", pre_order, "decoding order, e.g. SIR or RIS");
  pre->callback([&] {
    exit_code = run_pretrain(pre_config, pre_data, pre_out, pre_decoder, pre_masking, pre_order);
  });

  // reconstruct
  std::string rec_ckpt, rec_data, rec_out;
  std::size_t rec_index = 0;
  auto* rec = app.add_subcommand("reconstruct", "export masked/prediction/target triplets");
  rec->add_option("--ckpt", rec_ckpt, "checkpoint directory")->required();
  rec->add_option("--data", rec_data, "dataset directory")->required();
  rec->add_option("--index", rec_index, "sample index")->required();
  rec->add_option("--out", rec_out, "output directory")->required();
  rec->callback([&] { exit_code = run_reconstruct(rec_ckpt, rec_data, rec_index, rec_out); });

  // attn
  std::string attn_ckpt, attn_data, attn_out;
  std::size_t attn_index = 0, attn_layer = 0, attn_head = 0;
  auto* attn = app.add_subcommand("attn", "export one encoder attention head as PGM");
  attn->add_option("--ckpt", attn_ckpt, "checkpoint directory")->required();
  attn->add_option("--data", attn_data, "dataset directory")->required();
  attn->add_option("--index", attn_index, "sample index")->required();
  attn->add_option("--layer", attn_layer, "encoder layer")->required();
  attn->add_option("--head", attn_head, "attention head")->required();
  attn->add_option("--out", attn_out, "output PGM file")->required();
  attn->callback([&] {
    exit_code = run_attn(attn_ckpt, attn_data, attn_index, attn_layer, attn_head, attn_out);
  });

  // grad-check
  std::uint64_t check_seed = 0;
  auto* check = app.add_subcommand("grad-check", "finite-difference gradient self-check");
  check->add_option("--seed", check_seed, "probe seed")->capture_default_str();
  check->callback([&] { exit_code = run_grad_check(check_seed); });

  // mask-viz
  std::optional<std::string> viz_config;
  std::string viz_data, viz_out;
  std::size_t viz_index = 0;
  double viz_u = 0.0;
  auto* viz = app.add_subcommand("mask-viz", "export mask overlays at a curriculum fraction");
  viz->add_option("--config", viz_config, "run config JSON");
  viz->add_option("--data", viz_data, "dataset directory")->required();
  viz->add_option("--index", viz_index, "sample index")->required();
  viz->add_option("--u", viz_u, "curriculum fraction in [0,1]")->capture_default_str();
  viz->add_option("--out", viz_out, "output directory")->required();
  viz->callback([&] { exit_code = run_mask_viz(viz_config, viz_data, viz_index, viz_u, viz_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const c2f::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const c2f::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
