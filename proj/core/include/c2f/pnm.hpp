#pragma once

// Binary PNM readers/writers: P6 (8-bit RGB), P5 (8-bit or 16-bit gray).
// 16-bit samples are big-endian words per the PGM specification. All
// failures throw IoError naming the offending file.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace c2f::pnm {

struct ImageU8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> data;  // row-major, interleaved channels
};

struct ImageU16 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> data;  // row-major, host order in memory
};

void write_ppm8(const std::filesystem::path& path, const ImageU8& image);
ImageU8 read_ppm8(const std::filesystem::path& path);

void write_pgm8(const std::filesystem::path& path, const ImageU8& image);
ImageU8 read_pgm8(const std::filesystem::path& path);

void write_pgm16(const std::filesystem::path& path, const ImageU16& image);
ImageU16 read_pgm16(const std::filesystem::path& path);

}  // namespace c2f::pnm
