#include "c2f/pnm.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <string>

#include "c2f/common.hpp"

namespace c2f::pnm {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
  throw IoError(path.string() + ": " + why);
}

// Reads one PNM header integer, skipping whitespace and # comments.
std::size_t read_header_int(std::istream& in, const std::filesystem::path& path) {
  for (;;) {
    int c = in.peek();
    if (c == EOF) fail(path, "truncated header");
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  std::size_t value = 0;
  if (!(in >> value)) fail(path, "malformed header integer");
  return value;
}

struct Header {
  std::string magic;
  std::size_t width, height, maxval;
};

Header read_header(std::istream& in, const std::filesystem::path& path,
                   const std::string& expected_magic, std::size_t expected_maxval) {
  Header h;
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in) fail(path, "truncated header");
  h.magic = {m0, m1};
  if (h.magic != expected_magic)
    fail(path, "expected " + expected_magic + " magic, got '" + h.magic + "'");
  h.width = read_header_int(in, path);
  h.height = read_header_int(in, path);
  h.maxval = read_header_int(in, path);
  if (h.maxval != expected_maxval)
    fail(path, "expected maxval " + std::to_string(expected_maxval) + ", got " +
                   std::to_string(h.maxval));
  if (h.width == 0 || h.height == 0) fail(path, "zero image dimension");
  // Exactly one whitespace byte separates the header from the raster.
  int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) fail(path, "missing raster separator");
  return h;
}

void read_raster(std::istream& in, const std::filesystem::path& path, char* dst,
                 std::size_t bytes) {
  in.read(dst, static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) fail(path, "truncated raster data");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  return in;
}

}  // namespace

void write_ppm8(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 3 || image.data.size() != image.width * image.height * 3)
    throw ContractError("write_ppm8: image must be interleaved RGB");
  auto out = open_out(path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) fail(path, "write failed");
}

ImageU8 read_ppm8(const std::filesystem::path& path) {
  auto in = open_in(path);
  Header h = read_header(in, path, "P6", 255);
  ImageU8 image;
  image.width = h.width;
  image.height = h.height;
  image.channels = 3;
  image.data.resize(h.width * h.height * 3);
  read_raster(in, path, reinterpret_cast<char*>(image.data.data()), image.data.size());
  return image;
}

void write_pgm8(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 1 || image.data.size() != image.width * image.height)
    throw ContractError("write_pgm8: image must be single-channel");
  auto out = open_out(path);
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) fail(path, "write failed");
}

ImageU8 read_pgm8(const std::filesystem::path& path) {
  auto in = open_in(path);
  Header h = read_header(in, path, "P5", 255);
  ImageU8 image;
  image.width = h.width;
  image.height = h.height;
  image.channels = 1;
  image.data.resize(h.width * h.height);
  read_raster(in, path, reinterpret_cast<char*>(image.data.data()), image.data.size());
  return image;
}

void write_pgm16(const std::filesystem::path& path, const ImageU16& image) {
  if (image.data.size() != image.width * image.height)
    throw ContractError("write_pgm16: data size does not match dimensions");
  auto out = open_out(path);
  out << "P5\n" << image.width << " " << image.height << "\n65535\n";
  std::vector<std::uint8_t> bytes(image.data.size() * 2);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(image.data[i] >> 8);  // big-endian
    bytes[2 * i + 1] = static_cast<std::uint8_t>(image.data[i] & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(path, "write failed");
}

ImageU16 read_pgm16(const std::filesystem::path& path) {
  auto in = open_in(path);
  Header h = read_header(in, path, "P5", 65535);
  ImageU16 image;
  image.width = h.width;
  image.height = h.height;
  image.data.resize(h.width * h.height);
  std::vector<std::uint8_t> bytes(image.data.size() * 2);
  read_raster(in, path, reinterpret_cast<char*>(bytes.data()), bytes.size());
  for (std::size_t i = 0; i < image.data.size(); ++i)
    image.data[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  return image;
}

}  // namespace c2f::pnm
