#pragma once

// One JSON document configures a whole run: sections scene, mask, model,
// train. Every field is optional and falls back to the in-code default;
// unknown keys are rejected with their full path so typos surface early.

#include <filesystem>
#include <string>

#include "c2f/masking.hpp"
#include "c2f/model.hpp"
#include "c2f/synthdata.hpp"
#include "c2f/trainer.hpp"

namespace c2f::cfg {

struct RunConfig {
  synth::SceneConfig scene;
  mask::MaskConfig mask;
  model::ModelConfig model;
  train::TrainConfig train;

  void validate() const;
};

// Applies the document's values over `defaults`. Malformed JSON, unknown
// keys, or wrongly typed values throw ContractError naming the key path.
RunConfig parse_run_config(const std::string& json_text, const RunConfig& defaults = {});

// Full echo including every defaulted field; keys are sorted, output stable.
std::string run_config_to_json(const RunConfig& cfg);

// Reads the file (IoError on failure), then parses as above.
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& defaults = {});

const char* decoder_mode_name(model::DecoderMode mode);
model::DecoderMode parse_decoder_mode(const std::string& name);
const char* mask_mode_name(mask::MaskMode mode);
mask::MaskMode parse_mask_mode(const std::string& name);

}  // namespace c2f::cfg
