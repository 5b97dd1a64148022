#include "c2f/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "c2f/common.hpp"
#include "c2f/pnm.hpp"
#include "c2f/rng.hpp"
#include "json.hpp"

namespace c2f::synth {

namespace {

using json = nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

struct Rgb {
  double r, g, b;
};

Rgb sample_color(rng::Stream& s, Rgb lo, Rgb hi) {
  return {lo.r + s.next_double() * (hi.r - lo.r),
          lo.g + s.next_double() * (hi.g - lo.g),
          lo.b + s.next_double() * (hi.b - lo.b)};
}

Rgb class_color_range_lo(int class_id) {
  switch (class_id) {
    case kClassGround: return {0.25, 0.45, 0.12};
    case kClassSky: return {0.45, 0.62, 0.82};
    case kClassCircle: return {0.72, 0.12, 0.12};
    case kClassSquare: return {0.78, 0.68, 0.08};
    default: return {0.52, 0.16, 0.60};  // triangle
  }
}

Rgb class_color_range_hi(int class_id) {
  switch (class_id) {
    case kClassGround: return {0.40, 0.60, 0.25};
    case kClassSky: return {0.60, 0.75, 0.95};
    case kClassCircle: return {0.90, 0.30, 0.30};
    case kClassSquare: return {0.95, 0.85, 0.25};
    default: return {0.70, 0.32, 0.80};
  }
}

struct ShapeGeometry {
  int kind = 0;  // 0 circle, 1 square, 2 triangle
  std::int64_t cx = 0, cy = 0, r = 0;
  Rgb color{};

  bool contains(std::int64_t x, std::int64_t y) const {
    const std::int64_t dx = x - cx;
    const std::int64_t dy = y - cy;
    switch (kind) {
      case 0: return dx * dx + dy * dy <= r * r;
      case 1: return std::abs(dx) <= r && std::abs(dy) <= r;
      default:  // upward triangle: apex (cx, cy-r), base y = cy+r
        return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
    }
  }
};

const char* kind_name(int kind) {
  switch (kind) {
    case 0: return "circle";
    case 1: return "square";
    default: return "triangle";
  }
}

int kind_class(int kind) {
  switch (kind) {
    case 0: return kClassCircle;
    case 1: return kClassSquare;
    default: return kClassTriangle;
  }
}

std::vector<std::size_t> footprint(const ShapeGeometry& g, std::size_t size) {
  std::vector<std::size_t> px;
  const auto n = static_cast<std::int64_t>(size);
  const std::int64_t y0 = std::max<std::int64_t>(0, g.cy - g.r);
  const std::int64_t y1 = std::min<std::int64_t>(n - 1, g.cy + g.r);
  const std::int64_t x0 = std::max<std::int64_t>(0, g.cx - g.r);
  const std::int64_t x1 = std::min<std::int64_t>(n - 1, g.cx + g.r);
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x)
      if (g.contains(x, y)) px.push_back(static_cast<std::size_t>(y) * size + x);
  return px;
}

double quantize_byte_grid(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

json config_to_json(const SceneConfig& cfg) {
  return json{{"image_size", cfg.image_size},
              {"shape_count_min", cfg.shape_count_min},
              {"shape_count_max", cfg.shape_count_max},
              {"min_visible_pixels", cfg.min_visible_pixels},
              {"noise_amplitude", cfg.noise_amplitude},
              {"seed", cfg.seed}};
}

SceneConfig config_from_json(const json& j, const std::filesystem::path& path) {
  SceneConfig cfg;
  try {
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.shape_count_min = j.at("shape_count_min").get<std::size_t>();
    cfg.shape_count_max = j.at("shape_count_max").get<std::size_t>();
    cfg.min_visible_pixels = j.at("min_visible_pixels").get<std::size_t>();
    cfg.noise_amplitude = j.at("noise_amplitude").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad scene config: " + e.what());
  }
  return cfg;
}

}  // namespace

void SceneConfig::validate() const {
  if (image_size < 8)
    throw ContractError("scene: image_size must be at least 8, got " +
                        std::to_string(image_size));
  if (shape_count_min > shape_count_max)
    throw ContractError("scene: shape count range [" + std::to_string(shape_count_min) +
                        "," + std::to_string(shape_count_max) + "] is empty");
  if (shape_count_max > kMaxShapesPerScene)
    throw ContractError("scene: shape_count_max " + std::to_string(shape_count_max) +
                        " exceeds the per-scene limit " +
                        std::to_string(kMaxShapesPerScene));
  if (min_visible_pixels == 0)
    throw ContractError("scene: min_visible_pixels must be positive");
  if (!(noise_amplitude >= 0.0 && noise_amplitude <= 1.0))
    throw ContractError("scene: noise_amplitude must lie in [0,1], got " +
                        std::to_string(noise_amplitude));
}

MultiGranularSample generate_sample(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const std::size_t size = cfg.image_size;
  const std::size_t area = size * size;
  rng::Stream sample_stream = rng::Stream(cfg.seed).child("sample").child(index);

  MultiGranularSample out;
  out.image_size = size;
  out.class_count = cfg.class_count();
  out.seed = cfg.seed;
  out.index = index;
  out.instance.assign(area, 0);
  out.semantic.assign(area, 0);
  out.rgb.assign(area * 3, 0.0);

  // Horizon: jittered sinusoidal boundary between sky (above) and ground.
  rng::Stream layout = sample_stream.child("layout");
  const double base = size * (0.35 + 0.30 * layout.next_double());
  const double amp = size * 0.05 * layout.next_double();
  const double cycles = 1.0 + static_cast<double>(layout.next_below(3));
  const double phase = 2.0 * kPi * layout.next_double();
  std::vector<std::size_t> horizon(size);
  for (std::size_t x = 0; x < size; ++x) {
    const double b = base + amp * std::sin(2.0 * kPi * cycles * x / size + phase);
    horizon[x] = static_cast<std::size_t>(
        std::clamp<std::int64_t>(std::llround(b), 1, static_cast<std::int64_t>(size) - 1));
  }
  const Rgb sky = sample_color(layout, class_color_range_lo(kClassSky),
                               class_color_range_hi(kClassSky));
  const Rgb ground = sample_color(layout, class_color_range_lo(kClassGround),
                                  class_color_range_hi(kClassGround));

  // Shapes, drawn back-to-front; each accepted candidate sits in front of the
  // stack so far. A candidate that would starve any shape (itself included)
  // below min_visible_pixels is resampled, then dropped after 20 retries.
  rng::Stream shapes = sample_stream.child("shapes");
  const std::size_t want =
      cfg.shape_count_min +
      shapes.next_below(cfg.shape_count_max - cfg.shape_count_min + 1);
  std::vector<ShapeGeometry> accepted;
  std::vector<std::size_t> visible;  // visible pixel count per accepted shape
  for (std::size_t k = 0; k < want; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
      ShapeGeometry g;
      g.kind = static_cast<int>(shapes.next_below(3));
      const std::int64_t rmin = std::max<std::int64_t>(3, size / 10);
      const std::int64_t rmax = std::max<std::int64_t>(rmin, size / 4);
      g.r = rmin + static_cast<std::int64_t>(shapes.next_below(rmax - rmin + 1));
      if (2 * g.r + 2 >= static_cast<std::int64_t>(size)) continue;
      g.cx = g.r + 1 + static_cast<std::int64_t>(shapes.next_below(size - 2 * g.r - 1));
      g.cy = g.r + 1 + static_cast<std::int64_t>(shapes.next_below(size - 2 * g.r - 1));
      g.color = sample_color(shapes, class_color_range_lo(kind_class(g.kind)),
                             class_color_range_hi(kind_class(g.kind)));

      const auto px = footprint(g, size);
      if (px.size() < cfg.min_visible_pixels) continue;
      std::vector<std::size_t> stolen(accepted.size(), 0);
      for (std::size_t p : px)
        if (out.instance[p] > 0) ++stolen[out.instance[p] - 1];
      bool ok = true;
      for (std::size_t j = 0; j < accepted.size(); ++j)
        ok = ok && visible[j] - stolen[j] >= cfg.min_visible_pixels;
      if (!ok) continue;

      const auto id = static_cast<std::uint16_t>(accepted.size() + 1);
      for (std::size_t p : px) out.instance[p] = id;
      for (std::size_t j = 0; j < accepted.size(); ++j) visible[j] -= stolen[j];
      accepted.push_back(g);
      visible.push_back(px.size());
      placed = true;
    }
    // A drop leaves ids contiguous because ids are assigned on acceptance.
  }

  out.shapes.reserve(accepted.size());
  for (const auto& g : accepted) {
    ShapeDescriptor d;
    d.kind = kind_name(g.kind);
    d.class_id = kind_class(g.kind);
    d.visible_pixels = visible[out.shapes.size()];
    out.shapes.push_back(std::move(d));
  }

  // Composite color + semantic labels, then per-pixel noise on the byte grid.
  rng::Stream noise = sample_stream.child("noise");
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t p = y * size + x;
      Rgb c{};
      if (out.instance[p] > 0) {
        const ShapeGeometry& g = accepted[out.instance[p] - 1];
        out.semantic[p] = static_cast<std::uint8_t>(kind_class(g.kind));
        c = g.color;
      } else {
        const bool is_sky = y < horizon[x];
        out.semantic[p] = static_cast<std::uint8_t>(is_sky ? kClassSky : kClassGround);
        c = is_sky ? sky : ground;
      }
      const double a = cfg.noise_amplitude;
      out.rgb[3 * p + 0] = quantize_byte_grid(c.r + a * (2.0 * noise.next_double() - 1.0));
      out.rgb[3 * p + 1] = quantize_byte_grid(c.g + a * (2.0 * noise.next_double() - 1.0));
      out.rgb[3 * p + 2] = quantize_byte_grid(c.b + a * (2.0 * noise.next_double() - 1.0));
    }
  }
  return out;
}

void save_sample(const MultiGranularSample& sample, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory: " + ec.message());
  const std::size_t size = sample.image_size;
  const std::size_t area = size * size;
  if (sample.rgb.size() != area * 3 || sample.instance.size() != area ||
      sample.semantic.size() != area)
    throw ContractError("save_sample: map sizes do not match image_size " +
                        std::to_string(size));

  pnm::ImageU8 rgb{size, size, 3, std::vector<std::uint8_t>(area * 3)};
  for (std::size_t i = 0; i < area * 3; ++i)
    rgb.data[i] = static_cast<std::uint8_t>(std::llround(sample.rgb[i] * 255.0));
  pnm::write_ppm8(dir / "rgb.ppm", rgb);

  pnm::ImageU16 inst{size, size, sample.instance};
  pnm::write_pgm16(dir / "instance.pgm", inst);

  pnm::ImageU8 sem{size, size, 1, std::vector<std::uint8_t>(sample.semantic.begin(),
                                                            sample.semantic.end())};
  pnm::write_pgm8(dir / "semantic.pgm", sem);

  json meta{{"seed", sample.seed},
            {"index", sample.index},
            {"image_size", sample.image_size},
            {"class_count", sample.class_count},
            {"shape_descriptors", json::array()}};
  for (const auto& s : sample.shapes)
    meta["shape_descriptors"].push_back({{"kind", s.kind},
                                         {"class_id", s.class_id},
                                         {"visible_pixels", s.visible_pixels}});
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError((dir / "meta.json").string() + ": cannot open for writing");
  out << meta.dump(2) << "\n";
  if (!out) throw IoError((dir / "meta.json").string() + ": write failed");
}

MultiGranularSample load_sample(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IoError(meta_path.string() + ": cannot open for reading");
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw IoError(meta_path.string() + ": malformed json: " + e.what());
  }

  MultiGranularSample sample;
  try {
    sample.seed = meta.at("seed").get<std::uint64_t>();
    sample.index = meta.at("index").get<std::uint64_t>();
    sample.image_size = meta.at("image_size").get<std::size_t>();
    sample.class_count = meta.at("class_count").get<std::size_t>();
    for (const auto& d : meta.at("shape_descriptors")) {
      ShapeDescriptor s;
      s.kind = d.at("kind").get<std::string>();
      s.class_id = d.at("class_id").get<int>();
      s.visible_pixels = d.at("visible_pixels").get<std::size_t>();
      sample.shapes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(meta_path.string() + ": missing or mistyped key: " + e.what());
  }

  const auto rgb = pnm::read_ppm8(dir / "rgb.ppm");
  const auto inst = pnm::read_pgm16(dir / "instance.pgm");
  const auto sem = pnm::read_pgm8(dir / "semantic.pgm");
  const std::size_t size = sample.image_size;
  if (rgb.width != size || rgb.height != size)
    throw IoError((dir / "rgb.ppm").string() + ": dimensions disagree with meta.json");
  if (inst.width != size || inst.height != size)
    throw IoError((dir / "instance.pgm").string() + ": dimensions disagree with meta.json");
  if (sem.width != size || sem.height != size)
    throw IoError((dir / "semantic.pgm").string() + ": dimensions disagree with meta.json");

  for (std::uint8_t c : sem.data)
    if (c >= sample.class_count)
      throw IoError((dir / "semantic.pgm").string() + ": class id " + std::to_string(c) +
                    " outside [0," + std::to_string(sample.class_count) + ")");

  sample.rgb.resize(rgb.data.size());
  for (std::size_t i = 0; i < rgb.data.size(); ++i)
    sample.rgb[i] = static_cast<double>(rgb.data[i]) / 255.0;
  sample.instance = inst.data;
  sample.semantic.assign(sem.data.begin(), sem.data.end());
  return sample;
}

DatasetManifest generate_dataset(const SceneConfig& cfg, std::size_t count,
                                 const std::filesystem::path& out_dir) {
  if (count == 0) throw ContractError("generate_dataset: count must be at least 1");
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string() + ": cannot create directory: " + ec.message());

  DatasetManifest manifest;
  manifest.config = cfg;
  json entries = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu", i);
    const auto sample = generate_sample(cfg, i);
    save_sample(sample, out_dir / name);
    manifest.sample_dirs.emplace_back(name);
    entries.push_back({{"path", name}, {"index", i}});
  }

  json j{{"format_version", 1},
         {"count", count},
         {"scene_config", config_to_json(cfg)},
         {"samples", entries}};
  const auto manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path);
  if (!out) throw IoError(manifest_path.string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError(manifest_path.string() + ": write failed");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
  const auto manifest_path = dataset_dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError(manifest_path.string() + ": cannot open for reading");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed json: " + e.what());
  }
  DatasetManifest manifest;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != 1)
      throw IoError(manifest_path.string() + ": unsupported format_version " +
                    std::to_string(version));
    manifest.config = config_from_json(j.at("scene_config"), manifest_path);
    for (const auto& e : j.at("samples"))
      manifest.sample_dirs.push_back(e.at("path").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": missing or mistyped key: " + e.what());
  }
  return manifest;
}

}  // namespace c2f::synth
