#include "lf/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

namespace lf {

int hamming_distance(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

namespace {

const int kCircle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1},
                            {3, 0},  {3, 1},  {2, 2},  {1, 3},
                            {0, 3},  {-1, 3}, {-2, 2}, {-3, 1},
                            {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};

// Fixed comparison pattern for the 256-bit patch descriptor.
struct Pattern {
  std::array<std::array<float, 4>, 256> pairs;
  Pattern() {
    std::mt19937 rng(20240915);
    std::normal_distribution<float> g(0.f, 4.f);
    for (auto& p : pairs) {
      for (float& v : p) v = std::clamp(g(rng), -8.f, 8.f);
    }
  }
};

const Pattern& pattern() {
  static const Pattern p;
  return p;
}

float fast_response(const ImageF& img, int x, int y, float threshold,
                    bool* is_corner) {
  const float center = img.at(x, y);
  int consecutive_bright = 0, consecutive_dark = 0;
  int best_bright = 0, best_dark = 0;
  float response = 0;
  // Walk the circle twice to catch wrapped arcs.
  for (int k = 0; k < 32; ++k) {
    const float v =
        img.at(x + kCircle[k % 16][0], y + kCircle[k % 16][1]);
    if (v > center + threshold) {
      ++consecutive_bright;
      consecutive_dark = 0;
    } else if (v < center - threshold) {
      ++consecutive_dark;
      consecutive_bright = 0;
    } else {
      consecutive_bright = consecutive_dark = 0;
    }
    best_bright = std::max(best_bright, consecutive_bright);
    best_dark = std::max(best_dark, consecutive_dark);
    if (k < 16) response += std::abs(v - center);
  }
  *is_corner = best_bright >= 9 || best_dark >= 9;
  return response;
}

Descriptor patch_descriptor(const ImageF& img, const Vec2& p) {
  Descriptor d{0, 0, 0, 0};
  const auto& pat = pattern().pairs;
  for (int i = 0; i < 256; ++i) {
    const float a = bilinear(img, p.x() + pat[i][0], p.y() + pat[i][1]);
    const float b = bilinear(img, p.x() + pat[i][2], p.y() + pat[i][3]);
    if (a < b) d[i / 64] |= (uint64_t(1) << (i % 64));
  }
  return d;
}

ImageF downscale(const ImageF& img, double factor) {
  ImageF out(int(img.width / factor), int(img.height / factor));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.at(x, y) = bilinear(img, x * factor, y * factor);
    }
  }
  return out;
}

}  // namespace

FrameFeatures detect_features(const ImageF& image, const FeatureConfig& cfg) {
  FrameFeatures out;
  ImageF level = image;
  double scale = 1.0;
  for (int l = 0; l < cfg.levels; ++l) {
    if (level.width < 32 || level.height < 32) break;
    std::vector<Keypoint> level_kps;
    for (int y = 3; y < level.height - 3; ++y) {
      for (int x = 3; x < level.width - 3; ++x) {
        bool corner = false;
        const float resp =
            fast_response(level, x, y, cfg.fast_threshold, &corner);
        if (corner) {
          level_kps.push_back({Vec2(x, y), resp, l});
        }
      }
    }
    // Non-max suppression by response within a radius.
    std::stable_sort(level_kps.begin(), level_kps.end(),
                     [](const Keypoint& a, const Keypoint& b) {
                       return a.response > b.response;
                     });
    std::vector<uint8_t> taken(size_t(level.width) * level.height, 0);
    for (const Keypoint& kp : level_kps) {
      const int x = int(kp.px.x());
      const int y = int(kp.px.y());
      bool blocked = false;
      for (int dy = -cfg.nms_radius; dy <= cfg.nms_radius && !blocked; ++dy) {
        for (int dx = -cfg.nms_radius; dx <= cfg.nms_radius; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= level.width || ny >= level.height) {
            continue;
          }
          if (taken[size_t(ny) * level.width + nx]) {
            blocked = true;
            break;
          }
        }
      }
      if (blocked) continue;
      taken[size_t(y) * level.width + x] = 1;
      Keypoint scaled = kp;
      scaled.px *= scale;
      out.keypoints.push_back(scaled);
      out.descriptors.push_back(patch_descriptor(level, kp.px));
      out.labels.push_back(-1);
      if (int(out.keypoints.size()) >= cfg.max_features) return out;
    }
    level = downscale(level, cfg.level_scale);
    scale *= cfg.level_scale;
  }
  return out;
}

Descriptor label_descriptor(int label) {
  Descriptor d;
  uint64_t x = uint64_t(label) + 0x12345678abcdefull;
  for (int i = 0; i < 4; ++i) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    d[i] = z ^ (z >> 31);
  }
  return d;
}

GridIndex::GridIndex(const std::vector<Keypoint>& keypoints, int width,
                     int height, int cell)
    : cell_(cell),
      cols_((width + cell - 1) / cell),
      rows_((height + cell - 1) / cell),
      buckets_(size_t(cols_) * rows_),
      keypoints_(&keypoints) {
  for (size_t i = 0; i < keypoints.size(); ++i) {
    const int cx = std::clamp(int(keypoints[i].px.x()) / cell_, 0, cols_ - 1);
    const int cy = std::clamp(int(keypoints[i].px.y()) / cell_, 0, rows_ - 1);
    buckets_[size_t(cy) * cols_ + cx].push_back(int(i));
  }
}

std::vector<int> GridIndex::query(const Vec2& center, double radius) const {
  std::vector<int> out;
  const int cx0 = std::clamp(int((center.x() - radius) / cell_), 0, cols_ - 1);
  const int cx1 = std::clamp(int((center.x() + radius) / cell_), 0, cols_ - 1);
  const int cy0 = std::clamp(int((center.y() - radius) / cell_), 0, rows_ - 1);
  const int cy1 = std::clamp(int((center.y() + radius) / cell_), 0, rows_ - 1);
  for (int cy = cy0; cy <= cy1; ++cy) {
    for (int cx = cx0; cx <= cx1; ++cx) {
      for (int idx : buckets_[size_t(cy) * cols_ + cx]) {
        if (((*keypoints_)[idx].px - center).norm() <= radius) {
          out.push_back(idx);
        }
      }
    }
  }
  return out;
}

}  // namespace lf
