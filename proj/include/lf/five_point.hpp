#pragma once

#include <cstdint>
#include <vector>

#include "lf/geometry.hpp"

namespace lf {

// Minimal five-point essential matrix solutions for normalized image
// coordinates (q2^T E q1 = 0, q = (x, y, 1)). Up to ten real solutions.
std::vector<Mat3> five_point_essential(const std::vector<Vec2>& x1,
                                       const std::vector<Vec2>& x2);

// First-order Sampson distance (squared, normalized coordinates).
double sampson_error(const Mat3& E, const Vec2& q1, const Vec2& q2);

struct EssentialRansacResult {
  bool ok = false;
  Mat3 E = Mat3::Zero();
  std::vector<int> inliers;
};

EssentialRansacResult ransac_essential(const std::vector<Vec2>& x1,
                                       const std::vector<Vec2>& x2,
                                       double sampson_threshold,
                                       int iterations, uint64_t seed);

struct RecoveredPose {
  bool ok = false;
  Mat3 R = Mat3::Identity();   // frame-1 to frame-2
  Vec3 t = Vec3::Zero();       // unit norm
  std::vector<Vec3> points;    // triangulated, frame-1 coordinates
  std::vector<int> point_ids;  // correspondence indices for `points`
  double median_parallax_rad = 0.0;
};

// Cheirality-checked decomposition of E over the inlier set, with linear
// two-view triangulation.
RecoveredPose recover_pose_from_essential(const Mat3& E,
                                          const std::vector<Vec2>& x1,
                                          const std::vector<Vec2>& x2,
                                          const std::vector<int>& inliers);

// Linear (DLT) two-view triangulation in frame-1 coordinates.
Vec3 triangulate_point(const Pose& T1, const Pose& T2, const Vec2& q1,
                       const Vec2& q2);

}  // namespace lf
