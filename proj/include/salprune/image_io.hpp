#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace salprune {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved image, channels = 1 (gray) or 3 (RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Binary netpbm: P5 (gray) and P6 (RGB), maxval <= 255.
Image8 read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image8& image);

// PNG via libpng; palette/16-bit/alpha inputs are normalized to 8-bit gray or RGB.
Image8 read_png(const std::filesystem::path& path);

// Dispatches on the file signature.
Image8 read_image(const std::filesystem::path& path);

}  // namespace salprune
