#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lf/errors.hpp"
#include "lf/types.hpp"

namespace lf {

// Row-major grayscale image with float intensities in [0, 255].
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.f)
      : width(w), height(h), data(size_t(w) * h, fill) {}

  float& at(int x, int y) { return data[size_t(y) * width + x]; }
  float at(int x, int y) const { return data[size_t(y) * width + x]; }
  bool inside(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  bool empty() const { return data.empty(); }
};

// Bilinear sample; caller guarantees 0 <= x <= width-1, 0 <= y <= height-1.
float bilinear(const ImageF& img, double x, double y);

ImageF box_blur(const ImageF& img, int radius);

// Loads PGM/PPM (binary) or PNG. Color inputs are converted to luminance
// with weights 0.299 / 0.587 / 0.114. Throws UnreadableImage.
ImageF read_image(const std::string& path);

void write_pgm(const ImageF& img, const std::string& path);

}  // namespace lf
