#pragma once

#include <cstdint>
#include <vector>

#include "lf/geometry.hpp"
#include "lf/image.hpp"

namespace lf {

struct Segment3D {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  int id = -1;
};

// Hides the parameter interval [t0, t1] of one wireframe segment over a
// frame range, splitting its rendering into two collinear fragments.
struct OcclusionEvent {
  int segment_id = -1;
  double t0 = 0.4;
  double t1 = 0.6;
  int frame_begin = 0;
  int frame_end = 0;  // exclusive
};

struct BlurEvent {
  int frame_begin = 0;
  int frame_end = 0;  // exclusive
  int radius = 1;
};

struct SceneSpec {
  int width = 640;
  int height = 480;
  CameraIntrinsics intrinsics{300, 300, 320, 240};
  int num_frames = 200;
  double fps = 30.0;
  // Box room wireframe and orbit trajectory.
  Vec3 room_min{-2.0, -2.0, 0.0};
  Vec3 room_max{2.0, 2.0, 2.4};
  double orbit_radius = 0.55;
  double camera_height = 1.2;
  double orbit_turns = 1.0;  // fraction of a full revolution over the run
  int num_points = 100;
  double pixel_noise = 0.0;  // sigma (px) on rendered segments and points
  double dropout = 0.0;      // per-observation dropout probability
  std::vector<OcclusionEvent> occlusions;
  std::vector<BlurEvent> blurs;
  uint64_t seed = 1;
  float background = 220.f;
  float foreground = 40.f;
  double stroke_width = 2.4;  // px
  double min_segment_px = 12.0;  // shorter projections carry no observation
};

struct SegmentObservation {
  int source_id = -1;
  LineSegment2D exact;  // pre-noise clipped projection
  Vec2 noisy_a = Vec2::Zero();
  Vec2 noisy_b = Vec2::Zero();
  bool dropped = false;
  bool occluded = false;  // an occlusion interval was active this frame
};

struct PointObservation {
  int source_id = -1;
  Vec2 exact = Vec2::Zero();
  Vec2 noisy = Vec2::Zero();
  bool dropped = false;
};

struct FrameTruth {
  double timestamp = 0.0;
  Pose pose;  // world-to-camera
  std::vector<SegmentObservation> segments;
  std::vector<PointObservation> points;
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<Segment3D> wireframe;
  std::vector<Vec3> points;
  std::vector<FrameTruth> truth;

  ImageF render_frame(int index) const;
  double trajectory_length() const;
};

SyntheticScene generate_synthetic_scene(const SceneSpec& spec);

// Anti-aliased dark stroke over a light background; strokes union by min.
void draw_segment(ImageF& img, const Vec2& a, const Vec2& b, double width,
                  float color);
void draw_dot(ImageF& img, const Vec2& center, double radius, float color);

// Clips a world segment against the near plane and the image rectangle.
// Returns false when nothing of it is visible.
bool project_segment(const Segment3D& seg, const Pose& T,
                     const CameraIntrinsics& K, int width, int height,
                     Vec2* a_px, Vec2* b_px);

}  // namespace lf
