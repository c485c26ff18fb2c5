#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "decaps/tensor.hpp"

namespace decaps {

/// Grayscale image (or any 2-D map) of doubles, row-major.
struct Image {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), pixels(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return pixels[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return pixels[r * cols + c]; }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

/// 8-bit RGB image for overlays.
struct RgbImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::array<std::uint8_t, 3>> pixels;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Half-pixel-centre bilinear resize (same kernel as the tensor op).
Image resize(const Image& image, std::size_t rows, std::size_t cols);

/// Rows [y0, y1) and columns [x0, x1).
Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1);

/// Stacks equally sized images into [N, 1, rows, cols].
Tensor to_tensor(std::span<const Image> images);

/// Extracts a [rows, cols] slab from a tensor whose trailing axes are the map.
Image image_from(const Tensor& maps, std::size_t index);

/// Binary graymap (P5). Values are scaled by maxval into [0, 1].
Image read_pgm(const std::filesystem::path& path);
/// Writes values clamped to [0, 1] and quantized to 8 bits.
void write_pgm(const std::filesystem::path& path, const Image& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

/// Quantizes a [0, 1] image to 8-bit gray in all three channels.
RgbImage to_rgb(const Image& image);

}  // namespace decaps
