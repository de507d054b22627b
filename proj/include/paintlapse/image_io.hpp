#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "paintlapse/frame.hpp"

namespace paintlapse {

class ImageIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an 8-bit PNG (gray, RGB or RGBA; alpha is discarded) and divides by 255.
Frame read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG, rounding value * 255 to the nearest integer.
void write_png(const std::filesystem::path& path, const Frame& frame);

/// Single-channel 8-bit label images (region maps).
struct LabelImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> labels;  // row-major

  uint8_t at(int64_t y, int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
};

void write_label_png(const std::filesystem::path& path, const LabelImage& image);
LabelImage read_label_png(const std::filesystem::path& path);

}  // namespace paintlapse
