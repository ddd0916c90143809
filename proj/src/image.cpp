#include "lf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace lf {

float bilinear(const ImageF& img, double x, double y) {
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  const int x0 = std::min(int(x), img.width - 2);
  const int y0 = std::min(int(y), img.height - 2);
  const double ax = x - x0;
  const double ay = y - y0;
  return float((1 - ax) * (1 - ay) * img.at(x0, y0) +
               ax * (1 - ay) * img.at(x0 + 1, y0) +
               (1 - ax) * ay * img.at(x0, y0 + 1) +
               ax * ay * img.at(x0 + 1, y0 + 1));
}

ImageF box_blur(const ImageF& img, int radius) {
  if (radius <= 0) return img;
  ImageF tmp(img.width, img.height);
  ImageF out(img.width, img.height);
  const int n = 2 * radius + 1;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float s = 0;
      for (int k = -radius; k <= radius; ++k) {
        s += img.at(std::clamp(x + k, 0, img.width - 1), y);
      }
      tmp.at(x, y) = s / n;
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float s = 0;
      for (int k = -radius; k <= radius; ++k) {
        s += tmp.at(x, std::clamp(y + k, 0, img.height - 1));
      }
      out.at(x, y) = s / n;
    }
  }
  return out;
}

namespace {

ImageF read_pnm(std::ifstream& in, const std::string& path) {
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") {
    throw UnreadableImage("unsupported PNM magic in " + path);
  }
  auto next_token = [&in]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    return std::string();
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw UnreadableImage("bad PNM header in " + path);
  }
  in.get();  // single whitespace before binary data
  ImageF img(w, h);
  if (magic == "P5") {
    std::vector<uint8_t> row(w);
    for (int y = 0; y < h; ++y) {
      in.read(reinterpret_cast<char*>(row.data()), w);
      for (int x = 0; x < w; ++x) img.at(x, y) = row[x];
    }
  } else {
    std::vector<uint8_t> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
      in.read(reinterpret_cast<char*>(row.data()), row.size());
      for (int x = 0; x < w; ++x) {
        img.at(x, y) = float(0.299 * row[3 * x] + 0.587 * row[3 * x + 1] +
                             0.114 * row[3 * x + 2]);
      }
    }
  }
  if (!in) throw UnreadableImage("truncated PNM data in " + path);
  return img;
}

ImageF read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw UnreadableImage("cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw UnreadableImage("png decode failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = png_get_image_width(png, info);
  const int h = png_get_image_height(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  std::vector<uint8_t> row(size_t(w) * channels);
  ImageF img(w, h);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      if (channels >= 3) {
        img.at(x, y) =
            float(0.299 * row[channels * x] + 0.587 * row[channels * x + 1] +
                  0.114 * row[channels * x + 2]);
      } else {
        img.at(x, y) = row[channels * x];
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace

ImageF read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnreadableImage("cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  in.seekg(0);
  if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
    return read_pnm(in, path);
  }
  in.close();
  return read_png(path);
}

void write_pgm(const ImageF& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      row[x] = uint8_t(std::clamp(img.at(x, y), 0.f, 255.f) + 0.5f);
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoFailure("short write to " + path);
}

}  // namespace lf
