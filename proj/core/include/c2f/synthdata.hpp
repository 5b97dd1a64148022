#pragma once

// Procedural scenes carrying three aligned label granularities: an RGB
// rendering, an instance-id map, and a semantic class map. Stuff classes
// (ground=0, sky=1) split the background along a jittered horizon; thing
// shapes (circle=2, square=3, triangle=4) are drawn back-to-front with
// front-most-wins occlusion.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace c2f::synth {

// Shared with the instance-reconstruction head, which has this many slots.
inline constexpr std::size_t kMaxShapesPerScene = 8;

inline constexpr int kClassGround = 0;
inline constexpr int kClassSky = 1;
inline constexpr int kClassCircle = 2;
inline constexpr int kClassSquare = 3;
inline constexpr int kClassTriangle = 4;

struct SceneConfig {
  std::size_t image_size = 64;
  std::size_t shape_count_min = 1;
  std::size_t shape_count_max = 4;
  std::size_t min_visible_pixels = 16;
  double noise_amplitude = 0.05;
  std::uint64_t seed = 0;

  static constexpr std::size_t kStuffClasses = 2;
  static constexpr std::size_t kThingClasses = 3;
  std::size_t class_count() const { return kStuffClasses + kThingClasses; }

  void validate() const;  // throws ContractError on out-of-range fields
};

struct ShapeDescriptor {
  std::string kind;  // "circle" | "square" | "triangle"
  int class_id = 0;
  std::size_t visible_pixels = 0;

  bool operator==(const ShapeDescriptor&) const = default;
};

struct MultiGranularSample {
  std::size_t image_size = 0;
  std::size_t class_count = 0;
  std::uint64_t seed = 0;   // generator seed echo
  std::uint64_t index = 0;  // sample ordinal
  // All maps are row-major over image_size x image_size.
  std::vector<double> rgb;              // 3 interleaved channels, values on the k/255 grid
  std::vector<std::uint16_t> instance;  // 0 = background, shapes are 1..K contiguously
  std::vector<std::uint8_t> semantic;   // class ids in [0, class_count)
  std::vector<ShapeDescriptor> shapes;  // descriptor for instance id i+1 at shapes[i]

  bool operator==(const MultiGranularSample&) const = default;
};

// Deterministic in (cfg.seed, index) and independent of any other index.
MultiGranularSample generate_sample(const SceneConfig& cfg, std::uint64_t index);

// Directory layout: rgb.ppm, instance.pgm (16-bit), semantic.pgm, meta.json.
void save_sample(const MultiGranularSample& sample, const std::filesystem::path& dir);
MultiGranularSample load_sample(const std::filesystem::path& dir);

struct DatasetManifest {
  std::vector<std::string> sample_dirs;  // relative to the manifest's directory
  SceneConfig config;
};

// Writes samples 0..count-1 plus manifest.json under out_dir.
DatasetManifest generate_dataset(const SceneConfig& cfg, std::size_t count,
                                 const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

}  // namespace c2f::synth
