#pragma once

#include <deque>
#include <optional>

#include "lf/features.hpp"
#include "lf/five_point.hpp"
#include "lf/line_extraction.hpp"
#include "lf/line_flow.hpp"
#include "lf/map.hpp"
#include "lf/optimizer.hpp"

namespace lf {

struct FrontendConfig {
  FlowConfig flow;
  ExtractionConfig extract;
  FeatureConfig features;
  double match_radius_step1 = 15.0;
  double match_radius_step2 = 7.0;
  int descriptor_match_max = 64;
  double ratio_test = 0.8;
  int min_tracked_points = 15;
  int init_min_matches = 50;
  int init_min_inliers = 100;
  double init_min_parallax_deg = 1.0;
  double ransac_px = 1.5;
  int ransac_iterations = 200;
  int keyframe_interval = 20;
  double keyframe_track_ratio = 0.9;
  double huber = 1.345;
  double predict_depth_min = 0.05;
  double predict_margin_px = 64.0;
  uint64_t seed = 1;
};

// Per-frame front-end state.
struct Frame {
  long frame_id = -1;
  double timestamp = 0.0;
  Pose pose;
  bool pose_valid = false;
  FrameFeatures features;
  std::vector<std::pair<int, int>> matches;  // (map point id, keypoint index)
  // Flow ids with an actual observation in this frame.
  std::vector<int> observed_flows;
};

struct MotionModelSE3 {
  Pose relative;  // per-frame motion, right-composed
  bool valid = false;
};

// Constant-velocity pose prediction: log-domain mean of the window's
// consecutive relative transforms, right-composed onto the latest pose.
// Throws InsufficientHistory with fewer than two poses.
Pose predict_pose(const std::vector<Pose>& recent, int t_w);
MotionModelSE3 fit_motion_se3(const std::vector<Pose>& recent, int t_w);

struct InitializationResult {
  Pose pose_b;  // second frame, first frame is the identity / world origin
  std::vector<std::pair<int, int>> matches;  // keypoint index pairs (a, b)
  std::vector<int> inlier_matches;           // indices into `matches`
  std::vector<Vec3> points;                  // triangulated, world frame
  std::vector<int> point_match_ids;          // indices into `matches`
};

// Two-view map initialization: descriptor matching, five-point RANSAC,
// cheirality-checked decomposition, parallax gate, scale normalization to
// unit median depth. Returns none when any gate fails.
std::optional<InitializationResult> initialize_map(
    const FrameFeatures& frame_a, const FrameFeatures& frame_b,
    const CameraIntrinsics& K, const FrontendConfig& cfg);

struct TrackResult {
  Pose refined;
  std::vector<std::pair<int, int>> matches;  // (map point id, keypoint index)
};

// Two-step point tracking: radius search around predicted projections with a
// pose refinement in between, then a re-projection sweep for extra matches.
// Throws TrackingLost below the minimum match count.
TrackResult track_points(const FrameFeatures& features, const Pose& T_pred,
                         const MapState& map, const CameraIntrinsics& K,
                         const FrontendConfig& cfg);

struct WindowObservation {
  int frame_index = 0;  // index into the window
  Vec3 point = Vec3::Zero();
  Vec2 px = Vec2::Zero();
};

struct WindowLineObservation {
  int frame_index = 0;
  Line3D line;
  Vec2 e1 = Vec2::Zero();
  Vec2 e2 = Vec2::Zero();
};

struct ShortTermProblem {
  std::vector<Pose> window_poses;   // refined in place
  std::vector<Pose> anchor_poses;   // up to two poses before the window
  std::vector<WindowObservation> points;
  std::vector<WindowLineObservation> lines;
};

// Sliding-window pose refinement over the robust three-term cost (lines,
// points, trajectory smoothness) with landmarks fixed.
SolverReport short_term_optimize(ShortTermProblem& problem,
                                 const CameraIntrinsics& K,
                                 const FrontendConfig& cfg);

}  // namespace lf
