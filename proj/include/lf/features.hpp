#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lf/image.hpp"
#include "lf/types.hpp"

namespace lf {

using Descriptor = std::array<uint64_t, 4>;  // 256-bit binary patch signature

int hamming_distance(const Descriptor& a, const Descriptor& b);

struct Keypoint {
  Vec2 px = Vec2::Zero();
  float response = 0.f;
  int octave = 0;
};

struct FeatureConfig {
  int max_features = 800;
  float fast_threshold = 16.f;
  int levels = 3;
  double level_scale = 1.5;
  int grid_cell = 32;
  int nms_radius = 4;
};

struct FrameFeatures {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
  std::vector<int> labels;  // oracle source ids when injected, else -1
};

// Multi-scale FAST-style corners with a binary patch descriptor.
FrameFeatures detect_features(const ImageF& image, const FeatureConfig& cfg);

// Deterministic descriptor for an oracle-labeled point; equal labels match
// at distance zero, distinct labels differ in about half the bits.
Descriptor label_descriptor(int label);

// Cell-bucketed keypoint index for radius queries.
class GridIndex {
 public:
  GridIndex(const std::vector<Keypoint>& keypoints, int width, int height,
            int cell);
  std::vector<int> query(const Vec2& center, double radius) const;

 private:
  int cell_;
  int cols_;
  int rows_;
  std::vector<std::vector<int>> buckets_;
  const std::vector<Keypoint>* keypoints_;
};

}  // namespace lf
