#pragma once

#include <optional>
#include <vector>

#include "lf/geometry.hpp"
#include "lf/image.hpp"

namespace lf {

// Per-frame level-line field: undirected (mod-pi) angles orthogonal to the
// image gradient, defined only where the gradient magnitude clears the
// threshold. The used mask grows monotonically within one frame.
struct LevelLineField {
  int width = 0;
  int height = 0;
  std::vector<float> angle;     // [0, pi), valid where defined
  std::vector<float> magnitude;
  std::vector<uint8_t> defined;
  std::vector<uint8_t> used;

  // Touched-pixel accounting (analog of the visited-pixel figures).
  mutable std::vector<uint8_t> touched;
  mutable size_t touched_count = 0;

  size_t index(int x, int y) const { return size_t(y) * width + x; }
  bool inside(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  void touch(int x, int y) const {
    uint8_t& t = touched[index(x, y)];
    if (!t) {
      t = 1;
      ++touched_count;
    }
  }
  void reset_touched() {
    std::fill(touched.begin(), touched.end(), uint8_t(0));
    touched_count = 0;
  }
};

struct LineSupportRegion {
  std::vector<Eigen::Vector2i> pixels;
  double region_angle = 0.0;  // [0, pi)
};

struct RectApprox {
  Vec2 center = Vec2::Zero();
  double main_angle = 0.0;  // [0, pi)
  double length = 0.0;
  double width = 0.0;
  double density = 0.0;
};

struct ExtractionConfig {
  double grad_threshold = 5.0;
  double angle_tolerance = 22.5 * M_PI / 180.0;  // region-growing tau
  int min_region_pixels = 20;
  double min_length = 15.0;
  double aspect_min = 3.0;
  double density_min = 0.7;
  double guided_min_length = 8.0;
  double collin2d = 5.0 * M_PI / 180.0;
  double collin_perp_dist = 2.0;  // px, midpoint-to-line gate
  double fuse_gap_abs = 8.0;      // px
  double fuse_gap_rel = 0.5;      // fraction of the predicted length
  int seed_grid = 5;
  double rect_min_width = 6.0;
  double rect_max_width = 40.0;
  double rect_length_margin = 6.0;
};

// Throws ImageTooSmall for images under 3x3.
LevelLineField compute_level_line_field(const ImageF& image,
                                        double grad_threshold);

// 8-connected growth from an unvisited defined seed; marks region pixels
// used. The region angle is the axial mean of member level-line angles.
// Throws SeedInvalid.
LineSupportRegion grow_region(LevelLineField& field,
                              const Eigen::Vector2i& seed, double tau);

struct RegionFit {
  RectApprox rect;
  LineSegment2D segment;  // theta in [0, pi)
};

// Magnitude-weighted rectangle approximation. Throws RegionTooSmall when the
// region has fewer than min_region_pixels members.
RegionFit rectangle_from_region(const LineSupportRegion& region,
                                const LevelLineField& field,
                                int min_region_pixels);

// LSD-style scan over unvisited pixels in decreasing gradient magnitude.
// When `widths` is given it receives the support-region width per segment.
std::vector<LineSegment2D> full_scan_extract(LevelLineField& field,
                                             const ExtractionConfig& cfg,
                                             std::vector<double>* widths =
                                                 nullptr);

struct GuidedResult {
  std::optional<LineSegment2D> segment;
  std::vector<Eigen::Vector2i> consumed;
  double region_width = 0.0;  // support-region width of the best candidate
};

// Prediction-guided extraction inside a search rectangle around `predicted`.
// Grows regions from a uniform seed grid, keeps the candidate most collinear
// with the prediction, fuses collinear near candidates (bridging occlusion
// gaps), and consumes only the pixels of the accepted candidates.
GuidedResult guided_extract(LevelLineField& field,
                            const LineSegment2D& predicted, double prior_width,
                            const ExtractionConfig& cfg);

struct TrackedSeed {
  Vec2 position = Vec2::Zero();
  bool valid = false;
};

// Pyramidal inverse-compositional translation tracking of sparse seeds.
// Throws SizeMismatch for images of different sizes.
std::vector<TrackedSeed> klt_track_seeds(const ImageF& prev, const ImageF& cur,
                                         const std::vector<Vec2>& seeds,
                                         int levels = 3, int radius = 4);

}  // namespace lf
