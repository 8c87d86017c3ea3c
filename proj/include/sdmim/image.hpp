#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace sdmim {

/// Single-channel image, row-major, values nominally in [0,1].
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool operator==(const GrayImage&) const = default;
};

/// Reads 8-bit binary PGM (P5); pixels are scaled by 1/maxval.
GrayImage read_pgm(const std::filesystem::path& path);
/// Writes 8-bit binary PGM; values are clamped to [0,1] and rounded.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
/// Reads PNG, converted to 8-bit grayscale.
GrayImage read_png(const std::filesystem::path& path);
/// Dispatches on file signature (PGM or PNG).
GrayImage read_image(const std::filesystem::path& path);

/// Bilinear resize with pixel-center alignment.
GrayImage resize_bilinear(const GrayImage& image, std::size_t height, std::size_t width);

/// Horizontally concatenates images of equal height.
GrayImage hconcat(const std::vector<GrayImage>& images);

}  // namespace sdmim
