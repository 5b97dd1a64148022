#include "c2f/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace c2f::cfg {
namespace {

using nlohmann::json;
using tok::Granularity;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ContractError("config: " + path + ": " + what);
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

std::size_t as_count(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0)
    fail(path, "expected a nonnegative integer");
  return j.get<std::size_t>();
}

std::uint64_t as_seed(const json& j, const std::string& path) {
  if (!j.is_number_unsigned()) fail(path, "expected a nonnegative integer");
  return j.get<std::uint64_t>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Granularity parse_granularity(const std::string& name, const std::string& path) {
  for (Granularity g : tok::kGranularityOrder)
    if (name == tok::name_of(g)) return g;
  fail(path, "unknown granularity '" + name + "'");
}

void parse_scene(const json& j, synth::SceneConfig& out, const std::string& base) {
  if (!j.is_object()) fail(base, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = base + "." + key;
    if (key == "image_size")
      out.image_size = as_count(value, path);
    else if (key == "shape_count_min")
      out.shape_count_min = as_count(value, path);
    else if (key == "shape_count_max")
      out.shape_count_max = as_count(value, path);
    else if (key == "min_visible_pixels")
      out.min_visible_pixels = as_count(value, path);
    else if (key == "noise_amplitude")
      out.noise_amplitude = as_number(value, path);
    else if (key == "seed")
      out.seed = as_seed(value, path);
    else
      fail(path, "unknown key");
  }
}

void parse_schedule(const json& j, mask::ScheduleConfig& out, const std::string& base) {
  if (!j.is_object()) fail(base, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = base + "." + key;
    if (key == "breakpoints") {
      if (!value.is_array()) fail(path, "expected an array");
      out.breakpoints.clear();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const std::string bp_path = path + "[" + std::to_string(i) + "]";
        const json& bp = value[i];
        if (!bp.is_object()) fail(bp_path, "expected an object");
        mask::ScheduleBreakpoint parsed;
        for (const auto& [bkey, bval] : bp.items()) {
          const std::string fpath = bp_path + "." + bkey;
          if (bkey == "u")
            parsed.u = as_number(bval, fpath);
          else if (bkey == "alpha_instance")
            parsed.alpha_instance = as_number(bval, fpath);
          else if (bkey == "alpha_semantic")
            parsed.alpha_semantic = as_number(bval, fpath);
          else
            fail(fpath, "unknown key");
        }
        out.breakpoints.push_back(parsed);
      }
    } else {
      fail(path, "unknown key");
    }
  }
}

void parse_mask(const json& j, mask::MaskConfig& out, const std::string& base) {
  if (!j.is_object()) fail(base, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = base + "." + key;
    if (key == "visible_budget") {
      if (value.is_null())
        out.visible_budget.reset();
      else
        out.visible_budget = as_count(value, path);
    } else if (key == "object_emphasis") {
      out.object_emphasis = as_number(value, path);
    } else if (key == "class_weights") {
      if (!value.is_array()) fail(path, "expected an array");
      out.class_weights.clear();
      for (std::size_t i = 0; i < value.size(); ++i)
        out.class_weights.push_back(
            as_number(value[i], path + "[" + std::to_string(i) + "]"));
    } else if (key == "dirichlet_concentration") {
      out.dirichlet_concentration = as_number(value, path);
    } else if (key == "object_patch_threshold") {
      out.object_patch_threshold = as_number(value, path);
    } else if (key == "mode") {
      out.mode = parse_mask_mode(as_string(value, path));
    } else if (key == "schedule") {
      parse_schedule(value, out.schedule, path);
    } else {
      fail(path, "unknown key");
    }
  }
}

void parse_model(const json& j, model::ModelConfig& out, const std::string& base) {
  if (!j.is_object()) fail(base, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = base + "." + key;
    if (key == "patch_size")
      out.patch_size = as_count(value, path);
    else if (key == "class_count")
      out.class_count = as_count(value, path);
    else if (key == "max_instances")
      out.max_instances = as_count(value, path);
    else if (key == "enc_width")
      out.enc_width = as_count(value, path);
    else if (key == "enc_depth")
      out.enc_depth = as_count(value, path);
    else if (key == "enc_heads")
      out.enc_heads = as_count(value, path);
    else if (key == "dec_width")
      out.dec_width = as_count(value, path);
    else if (key == "dec_heads")
      out.dec_heads = as_count(value, path);
    else if (key == "dec_subblocks_per_stage")
      out.dec_subblocks_per_stage = as_count(value, path);
    else if (key == "ffn_ratio")
      out.ffn_ratio = as_count(value, path);
    else if (key == "task_order") {
      if (!value.is_array() || value.size() != 3) fail(path, "expected an array of 3 names");
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string ipath = path + "[" + std::to_string(i) + "]";
        out.task_order[i] = parse_granularity(as_string(value[i], ipath), ipath);
      }
    } else if (key == "decoder_mode") {
      out.decoder_mode = parse_decoder_mode(as_string(value, path));
    } else {
      fail(path, "unknown key");
    }
  }
}

void parse_loss_weights(const json& j, obj::LossWeights& out, const std::string& base) {
  if (!j.is_object()) fail(base, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = base + "." + key;
    if (key == "semantic")
      out.semantic = as_number(value, path);
    else if (key == "instance")
      out.instance = as_number(value, path);
    else if (key == "rgb")
      out.rgb = as_number(value, path);
    else
      fail(path, "unknown key");
  }
}

void parse_train(const json& j, train::TrainConfig& out, const std::string& base) {
  if (!j.is_object()) fail(base, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = base + "." + key;
    if (key == "epochs")
      out.epochs = as_count(value, path);
    else if (key == "warmup_epochs")
      out.warmup_epochs = as_count(value, path);
    else if (key == "batch_size")
      out.batch_size = as_count(value, path);
    else if (key == "base_lr")
      out.base_lr = as_number(value, path);
    else if (key == "beta1")
      out.beta1 = as_number(value, path);
    else if (key == "beta2")
      out.beta2 = as_number(value, path);
    else if (key == "weight_decay")
      out.weight_decay = as_number(value, path);
    else if (key == "grad_clip") {
      if (value.is_null())
        out.grad_clip.reset();
      else
        out.grad_clip = as_number(value, path);
    } else if (key == "seed")
      out.seed = as_seed(value, path);
    else if (key == "decoder_mode")
      out.decoder_mode = parse_decoder_mode(as_string(value, path));
    else if (key == "masking_mode")
      out.masking_mode = parse_mask_mode(as_string(value, path));
    else if (key == "loss_weights")
      parse_loss_weights(value, out.loss_weights, path);
    else
      fail(path, "unknown key");
  }
}

json scene_to_json(const synth::SceneConfig& c) {
  return json{{"image_size", c.image_size},
              {"shape_count_min", c.shape_count_min},
              {"shape_count_max", c.shape_count_max},
              {"min_visible_pixels", c.min_visible_pixels},
              {"noise_amplitude", c.noise_amplitude},
              {"seed", c.seed}};
}

json mask_to_json(const mask::MaskConfig& c) {
  json schedule = json::array();
  for (const auto& bp : c.schedule.breakpoints)
    schedule.push_back({{"u", bp.u},
                        {"alpha_instance", bp.alpha_instance},
                        {"alpha_semantic", bp.alpha_semantic}});
  json out{{"object_emphasis", c.object_emphasis},
           {"class_weights", c.class_weights},
           {"dirichlet_concentration", c.dirichlet_concentration},
           {"object_patch_threshold", c.object_patch_threshold},
           {"mode", mask_mode_name(c.mode)},
           {"schedule", {{"breakpoints", schedule}}}};
  out["visible_budget"] = c.visible_budget ? json(*c.visible_budget) : json(nullptr);
  return out;
}

json model_to_json(const model::ModelConfig& c) {
  json order = json::array();
  for (Granularity g : c.task_order) order.push_back(tok::name_of(g));
  return json{{"patch_size", c.patch_size},
              {"class_count", c.class_count},
              {"max_instances", c.max_instances},
              {"enc_width", c.enc_width},
              {"enc_depth", c.enc_depth},
              {"enc_heads", c.enc_heads},
              {"dec_width", c.dec_width},
              {"dec_heads", c.dec_heads},
              {"dec_subblocks_per_stage", c.dec_subblocks_per_stage},
              {"ffn_ratio", c.ffn_ratio},
              {"task_order", order},
              {"decoder_mode", decoder_mode_name(c.decoder_mode)}};
}

json train_to_json(const train::TrainConfig& c) {
  json out{{"epochs", c.epochs},
           {"warmup_epochs", c.warmup_epochs},
           {"batch_size", c.batch_size},
           {"base_lr", c.base_lr},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"weight_decay", c.weight_decay},
           {"seed", c.seed},
           {"decoder_mode", decoder_mode_name(c.decoder_mode)},
           {"masking_mode", mask_mode_name(c.masking_mode)},
           {"loss_weights",
            {{"semantic", c.loss_weights.semantic},
             {"instance", c.loss_weights.instance},
             {"rgb", c.loss_weights.rgb}}}};
  out["grad_clip"] = c.grad_clip ? json(*c.grad_clip) : json(nullptr);
  return out;
}

}  // namespace

void RunConfig::validate() const {
  scene.validate();
  mask.validate();
  model.validate();
  train.validate();
}

const char* decoder_mode_name(model::DecoderMode mode) {
  return mode == model::DecoderMode::Cascaded ? "cascaded" : "parallel";
}

model::DecoderMode parse_decoder_mode(const std::string& name) {
  if (name == "cascaded") return model::DecoderMode::Cascaded;
  if (name == "parallel") return model::DecoderMode::Parallel;
  throw ContractError("config: unknown decoder mode '" + name + "'");
}

const char* mask_mode_name(mask::MaskMode mode) {
  switch (mode) {
    case mask::MaskMode::Progressive: return "progressive";
    case mask::MaskMode::Random: return "random";
    case mask::MaskMode::Semantic: return "semantic";
    case mask::MaskMode::Instance: return "instance";
  }
  throw ContractError("config: unrepresentable mask mode");
}

mask::MaskMode parse_mask_mode(const std::string& name) {
  if (name == "progressive") return mask::MaskMode::Progressive;
  if (name == "random") return mask::MaskMode::Random;
  if (name == "semantic") return mask::MaskMode::Semantic;
  if (name == "instance") return mask::MaskMode::Instance;
  throw ContractError("config: unknown masking mode '" + name + "'");
}

RunConfig parse_run_config(const std::string& json_text, const RunConfig& defaults) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ContractError("config: top level must be an object");

  RunConfig out = defaults;
  for (const auto& [key, value] : doc.items()) {
    if (key == "scene")
      parse_scene(value, out.scene, key);
    else if (key == "mask")
      parse_mask(value, out.mask, key);
    else if (key == "model")
      parse_model(value, out.model, key);
    else if (key == "train")
      parse_train(value, out.train, key);
    else
      throw ContractError("config: " + key + ": unknown section");
  }
  return out;
}

std::string run_config_to_json(const RunConfig& cfg) {
  const json doc{{"scene", scene_to_json(cfg.scene)},
                 {"mask", mask_to_json(cfg.mask)},
                 {"model", model_to_json(cfg.model)},
                 {"train", train_to_json(cfg.train)}};
  return doc.dump(2);
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& defaults) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("config: failed reading " + path.string());
  return parse_run_config(buffer.str(), defaults);
}

}  // namespace c2f::cfg
