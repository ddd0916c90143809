#include "lf/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lf {

MotionModelSE3 fit_motion_se3(const std::vector<Pose>& recent, int t_w) {
  MotionModelSE3 model;
  const int n = int(recent.size());
  const int tail = std::min(n, t_w);
  if (tail < 2) throw InsufficientHistory();
  Vec6 mean = Vec6::Zero();
  for (int i = n - tail + 1; i < n; ++i) {
    mean += se3_log(recent[i - 1].inverse() * recent[i]);
  }
  mean /= double(tail - 1);
  model.relative = se3_exp(mean);
  model.valid = true;
  return model;
}

Pose predict_pose(const std::vector<Pose>& recent, int t_w) {
  const MotionModelSE3 model = fit_motion_se3(recent, t_w);
  return recent.back() * model.relative;
}

std::optional<InitializationResult> initialize_map(
    const FrameFeatures& frame_a, const FrameFeatures& frame_b,
    const CameraIntrinsics& K, const FrontendConfig& cfg) {
  // Mutual-best descriptor matching.
  std::vector<std::pair<int, int>> matches;
  std::vector<int> best_for_b(frame_b.keypoints.size(), -1);
  std::vector<int> best_dist_b(frame_b.keypoints.size(),
                               cfg.descriptor_match_max + 1);
  for (size_t j = 0; j < frame_b.keypoints.size(); ++j) {
    for (size_t i = 0; i < frame_a.keypoints.size(); ++i) {
      const int d =
          hamming_distance(frame_a.descriptors[i], frame_b.descriptors[j]);
      if (d < best_dist_b[j]) {
        best_dist_b[j] = d;
        best_for_b[j] = int(i);
      }
    }
  }
  std::vector<int> claimed(frame_a.keypoints.size(), -1);
  for (size_t j = 0; j < frame_b.keypoints.size(); ++j) {
    if (best_for_b[j] < 0) continue;
    if (claimed[best_for_b[j]] >= 0) continue;
    claimed[best_for_b[j]] = int(j);
    matches.push_back({best_for_b[j], int(j)});
  }
  if (int(matches.size()) < cfg.init_min_matches) return std::nullopt;

  std::vector<Vec2> x1, x2;
  for (const auto& [i, j] : matches) {
    x1.push_back(K.unproject(frame_a.keypoints[i].px).head<2>());
    x2.push_back(K.unproject(frame_b.keypoints[j].px).head<2>());
  }
  const double f = 0.5 * (K.fx + K.fy);
  const double threshold = (cfg.ransac_px / f) * (cfg.ransac_px / f);
  const EssentialRansacResult ransac = ransac_essential(
      x1, x2, threshold, cfg.ransac_iterations, cfg.seed ^ 0xe55e);
  if (!ransac.ok || int(ransac.inliers.size()) < cfg.init_min_matches) {
    return std::nullopt;
  }

  const RecoveredPose pose =
      recover_pose_from_essential(ransac.E, x1, x2, ransac.inliers);
  if (!pose.ok) return std::nullopt;
  if (pose.median_parallax_rad < cfg.init_min_parallax_deg * M_PI / 180.0) {
    return std::nullopt;
  }
  if (int(pose.points.size()) < cfg.init_min_inliers) return std::nullopt;

  // Fix the scale: median triangulated depth becomes one unit.
  std::vector<double> depths;
  for (const Vec3& X : pose.points) depths.push_back(X.z());
  std::nth_element(depths.begin(), depths.begin() + depths.size() / 2,
                   depths.end());
  const double median_depth = depths[depths.size() / 2];
  if (median_depth <= 1e-9) return std::nullopt;

  InitializationResult result;
  result.pose_b = Pose{pose.R, pose.t / median_depth};
  result.matches = matches;
  result.inlier_matches = ransac.inliers;
  for (size_t k = 0; k < pose.points.size(); ++k) {
    result.points.push_back(pose.points[k] / median_depth);
    result.point_match_ids.push_back(pose.point_ids[k]);
  }
  return result;
}

namespace {

// Best descriptor match within a radius, with a second-best ratio test.
int match_in_radius(const FrameFeatures& features, const GridIndex& grid,
                    const Vec2& center, double radius, const Descriptor& desc,
                    const std::vector<int>& kp_taken,
                    const FrontendConfig& cfg) {
  int best = -1, best_dist = cfg.descriptor_match_max + 1;
  int second_dist = best_dist;
  for (int idx : grid.query(center, radius)) {
    if (kp_taken[idx] >= 0) continue;
    const int d = hamming_distance(desc, features.descriptors[idx]);
    if (d < best_dist) {
      second_dist = best_dist;
      best_dist = d;
      best = idx;
    } else if (d < second_dist) {
      second_dist = d;
    }
  }
  if (best < 0) return -1;
  if (second_dist <= cfg.descriptor_match_max &&
      double(best_dist) > cfg.ratio_test * double(second_dist)) {
    return -1;
  }
  return best;
}

Pose refine_pose_with_points(const Pose& T0,
                             const std::vector<std::pair<int, int>>& matches,
                             const FrameFeatures& features,
                             const MapState& map, const CameraIntrinsics& K,
                             double huber) {
  Problem problem(K);
  const int pid = problem.add_pose(T0);
  for (const auto& [point_id, kp] : matches) {
    ResidualBlock b;
    b.kind = ResidualKind::point;
    b.pose_a = pid;
    b.point = problem.add_point(map.points.at(point_id).position, true);
    b.obs_point = features.keypoints[kp].px;
    b.huber_scale = huber;
    problem.add_block(b);
  }
  SolverOptions opts;
  opts.max_iterations = 20;
  problem.solve(opts);
  return problem.pose(pid);
}

// Representative descriptor of a map point: its latest observation's.
const Descriptor& point_descriptor(const MapPoint& point, const MapState& map) {
  const auto& [kf, idx] = point.observations.back();
  return map.keyframes.at(kf).keypoints[idx].descriptor;
}

}  // namespace

TrackResult track_points(const FrameFeatures& features, const Pose& T_pred,
                         const MapState& map, const CameraIntrinsics& K,
                         const FrontendConfig& cfg) {
  TrackResult result;
  result.refined = T_pred;
  if (features.keypoints.empty()) throw TrackingLost("no keypoints");

  // Reasonable bounds for the grid: derived from the principal point.
  const int width = int(2 * K.x0) + 64;
  const int height = int(2 * K.y0) + 64;
  const GridIndex grid(features.keypoints, width, height,
                       cfg.features.grid_cell);
  std::vector<int> kp_taken(features.keypoints.size(), -1);

  auto sweep = [&](const Pose& T, double radius) {
    for (const auto& [id, point] : map.points) {
      if (std::find_if(result.matches.begin(), result.matches.end(),
                       [&](const auto& m) { return m.first == id; }) !=
          result.matches.end()) {
        continue;
      }
      const Vec3 q = T.apply(point.position);
      if (q.z() <= 1e-6) continue;
      const Vec2 proj = K.project(q);
      if (proj.x() < -32 || proj.y() < -32 || proj.x() > width + 32 ||
          proj.y() > height + 32) {
        continue;
      }
      const int kp = match_in_radius(features, grid, proj, radius,
                                     point_descriptor(point, map), kp_taken,
                                     cfg);
      if (kp < 0) continue;
      kp_taken[kp] = id;
      result.matches.push_back({id, kp});
    }
  };

  // Step 1: search near the predicted projections, refine the pose.
  sweep(T_pred, cfg.match_radius_step1);
  if (int(result.matches.size()) >= 4) {
    result.refined = refine_pose_with_points(T_pred, result.matches, features,
                                             map, K, cfg.huber);
  }
  // Step 2: re-project the local map with the refined pose.
  sweep(result.refined, cfg.match_radius_step2);
  if (int(result.matches.size()) < cfg.min_tracked_points) {
    throw TrackingLost("tracked " + std::to_string(result.matches.size()) +
                       " points");
  }
  result.refined = refine_pose_with_points(result.refined, result.matches,
                                           features, map, K, cfg.huber);
  return result;
}

SolverReport short_term_optimize(ShortTermProblem& problem,
                                 const CameraIntrinsics& K,
                                 const FrontendConfig& cfg) {
  Problem opt(K);
  std::vector<int> anchor_ids, window_ids;
  for (const Pose& T : problem.anchor_poses) {
    anchor_ids.push_back(opt.add_pose(T, true));
  }
  for (const Pose& T : problem.window_poses) {
    window_ids.push_back(opt.add_pose(T, false));
  }
  auto pose_id = [&](int idx) {
    // idx counts across anchors then window.
    return idx < int(anchor_ids.size())
               ? anchor_ids[idx]
               : window_ids[idx - anchor_ids.size()];
  };

  for (const WindowObservation& obs : problem.points) {
    ResidualBlock b;
    b.kind = ResidualKind::point;
    b.pose_a = window_ids.at(obs.frame_index);
    b.point = opt.add_point(obs.point, true);
    b.obs_point = obs.px;
    b.huber_scale = cfg.huber;
    opt.add_block(b);
  }
  for (const WindowLineObservation& obs : problem.lines) {
    ResidualBlock b;
    b.kind = ResidualKind::line;
    b.pose_a = window_ids.at(obs.frame_index);
    b.line = opt.add_line(obs.line, true);
    b.obs_e1 = obs.e1;
    b.obs_e2 = obs.e2;
    b.huber_scale = cfg.huber;
    opt.add_block(b);
  }
  // Smoothness over every consecutive triple spanning anchors and window.
  const int total = int(anchor_ids.size() + window_ids.size());
  for (int k = 0; k + 2 < total; ++k) {
    ResidualBlock b;
    b.kind = ResidualKind::smoothness;
    b.pose_a = pose_id(k);
    b.pose_b = pose_id(k + 1);
    b.pose_c = pose_id(k + 2);
    opt.add_block(b);
  }

  SolverOptions opts;
  opts.max_iterations = 25;
  const SolverReport report = opt.solve(opts);
  for (size_t i = 0; i < window_ids.size(); ++i) {
    problem.window_poses[i] = opt.pose(window_ids[i]);
  }
  return report;
}

}  // namespace lf
