#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mkgan/image.h"

namespace mkgan {

// 8-bit raster as stored on disk; samples are interleaved per pixel.
struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> samples;
};

// Reads an 8/16-bit PNG (gray, gray+alpha, RGB, RGBA or palette) or a
// binary/ASCII PGM. Alpha is dropped; 16-bit samples are reduced to 8 bits.
Raster8 read_raster(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster8& raster);

// Intensity conversion: v / 255 on load, floor(v * 255 + 0.5) on save.
Image to_image(const Raster8& raster);
Raster8 to_raster(const Image& image);
std::uint8_t quantize(double v);

Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

}  // namespace mkgan
