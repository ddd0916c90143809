#include "lf/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lf {

namespace {

double vec_angle(const Vec3& a, const Vec3& b) {
  const Vec3 an = a.normalized();
  const Vec3 bn = b.normalized();
  return std::atan2(an.cross(bn).norm(), an.dot(bn));
}

double acute_angle(const Vec3& a, const Vec3& b) {
  const double ang = vec_angle(a, b);
  return ang > M_PI / 2 ? M_PI - ang : ang;
}

// Back-projection of a pixel onto the infinite line. Throws RayParallel.
Vec3 backproject_onto_line(const Vec2& px, const Line3D& line, const Pose& T,
                           const CameraIntrinsics& K) {
  const Vec3 dir = T.R.transpose() * K.unproject(px);
  return ray_line_closest_point(T.center(), dir, line);
}

// Max per-endpoint normalized line reprojection residual of one observation.
double observation_residual(const LineObservation& obs, const Line3D& line,
                            const std::map<int, KeyframeData>& keyframes,
                            const CameraIntrinsics& K) {
  const Pose& T = keyframes.at(obs.kf_id).pose;
  const Vec2 r = line_residual(obs.segment.start(), obs.segment.end(), line.n,
                               line.v, T, K);
  return r.cwiseAbs().maxCoeff();
}

}  // namespace

TriangulationResult triangulate_flow(
    const std::vector<LineObservation>& observations,
    const std::map<int, KeyframeData>& keyframes, const CameraIntrinsics& K,
    const BackendConfig& cfg) {
  TriangulationResult result;
  if (observations.size() < 2) return result;

  // The latest two keyframe observations span the triangulation planes.
  const LineObservation& first = observations[observations.size() - 2];
  const LineObservation& second = observations.back();
  const Pose& T1 = keyframes.at(first.kf_id).pose;
  const Pose& T2 = keyframes.at(second.kf_id).pose;
  const Plane p1 = plane_from_segment(first.segment, T1, K);
  const Plane p2 = plane_from_segment(second.segment, T2, K);

  const double angle = acute_angle(p1.n, p2.n);
  if (angle <= cfg.plane_angle_min_deg * M_PI / 180.0) return result;

  Line3D line;
  line.n = p2.d * p1.n - p1.d * p2.n;
  line.v = p2.n.cross(p1.n);
  const double scale = line.v.norm();
  if (scale < 1e-15) return result;
  line.n /= scale;
  line.v /= scale;

  // Orient the direction to agree with the most recent 2D observation.
  try {
    const Vec3 ray_dir =
        T2.R.transpose() * K.unproject(second.segment.mid);
    const Vec3 X0 = ray_line_closest_point(T2.center(), ray_dir, line);
    const Vec3 q0 = T2.apply(X0);
    const Vec3 q1 = T2.apply(X0 + 1e-3 * line.v);
    if (q0.z() > 1e-9 && q1.z() > 1e-9) {
      const Vec2 d_img = K.project(q1) - K.project(q0);
      if (d_img.dot(second.segment.direction()) < 0) {
        line.n = -line.n;
        line.v = -line.v;
      }
    }
  } catch (const RayParallel&) {
  }

  // Reprojection census over the whole flow.
  int outliers = 0;
  for (const LineObservation& obs : observations) {
    double r = 1e30;
    try {
      r = observation_residual(obs, line, keyframes, K);
    } catch (const DegenerateProjection&) {
    }
    if (r > cfg.reproj_outlier_px) ++outliers;
  }
  if (double(outliers) > cfg.triang_outlier_frac * double(observations.size())) {
    result.remove_flow = true;
    return result;
  }

  line = update_endpoints(line, observations, keyframes, K);
  result.line = line;
  return result;
}

Line3D update_endpoints(const Line3D& line,
                        const std::vector<LineObservation>& observations,
                        const std::map<int, KeyframeData>& keyframes,
                        const CameraIntrinsics& K) {
  const Vec3 origin = line.origin_foot();
  const Vec3 vn = line.v.normalized();
  std::vector<double> start_params, end_params;
  for (const LineObservation& obs : observations) {
    const Pose& T = keyframes.at(obs.kf_id).pose;
    try {
      const Vec3 Ea = backproject_onto_line(obs.segment.start(), line, T, K);
      const Vec3 Eb = backproject_onto_line(obs.segment.end(), line, T, K);
      const double sa = (Ea - origin).dot(vn);
      const double sb = (Eb - origin).dot(vn);
      // Orientation flip is absorbed by binning along +v.
      start_params.push_back(std::min(sa, sb));
      end_params.push_back(std::max(sa, sb));
    } catch (const RayParallel&) {
      // Observation skipped.
    }
  }
  if (start_params.empty()) return line;
  const double s_mean =
      std::accumulate(start_params.begin(), start_params.end(), 0.0) /
      double(start_params.size());
  const double e_mean =
      std::accumulate(end_params.begin(), end_params.end(), 0.0) /
      double(end_params.size());
  Line3D out = line;
  out.start_point = origin + s_mean * vn;
  out.end_point = origin + e_mean * vn;
  return out;
}

double endpoint_uncertainty(const Vec2& e, const Line3D& line, const Pose& T,
                            const CameraIntrinsics& K) {
  Vec3 l = project_line(line, T, K);
  l /= l.head<2>().norm();
  const Vec2 along(-l.y(), l.x());
  const Vec2 e1 = e + 0.5 * along;
  const Vec2 e2 = e - 0.5 * along;
  const Vec3 E1 = backproject_onto_line(e1, line, T, K);
  const Vec3 E2 = backproject_onto_line(e2, line, T, K);
  return (E1 - E2).norm();  // ||e1 - e2|| is one pixel by construction
}

UncertaintyStats recompute_uncertainty_stats(const MapState& map,
                                             const CameraIntrinsics& K,
                                             int current_kf) {
  std::vector<double> values;
  for (const auto& [id, line] : map.lines) {
    for (const LineObservation& obs : line.observations) {
      const Pose& T = map.keyframes.at(obs.kf_id).pose;
      for (const Vec2& e : {obs.segment.start(), obs.segment.end()}) {
        try {
          values.push_back(endpoint_uncertainty(e, line.line, T, K));
        } catch (const Error&) {
        }
      }
    }
  }
  UncertaintyStats stats;
  stats.last_update_keyframe = current_kf;
  if (values.empty()) return stats;
  stats.mu = std::accumulate(values.begin(), values.end(), 0.0) /
             double(values.size());
  double var = 0;
  for (double v : values) var += (v - stats.mu) * (v - stats.mu);
  stats.sigma = std::sqrt(var / double(values.size()));
  return stats;
}

void reject_outliers(MapState& map, const UncertaintyStats& stats,
                     const CameraIntrinsics& K) {
  const double threshold = stats.mu + 3.0 * stats.sigma;
  std::vector<int> emptied;
  for (auto& [id, line] : map.lines) {
    std::vector<LineObservation> kept;
    for (const LineObservation& obs : line.observations) {
      const Pose& T = map.keyframes.at(obs.kf_id).pose;
      bool reject = false;
      for (const Vec2& e : {obs.segment.start(), obs.segment.end()}) {
        try {
          if (endpoint_uncertainty(e, line.line, T, K) > threshold) {
            reject = true;
          }
        } catch (const Error&) {
          reject = true;
        }
      }
      if (!reject) kept.push_back(obs);
    }
    if (kept.size() != line.observations.size()) {
      line.observations = std::move(kept);
      if (line.observations.empty()) {
        emptied.push_back(id);
      } else {
        line.line = update_endpoints(line.line, line.observations,
                                     map.keyframes, K);
      }
    }
  }
  for (int id : emptied) {
    for (auto it = map.flow_line_links.begin();
         it != map.flow_line_links.end();) {
      it = it->second == id ? map.flow_line_links.erase(it) : std::next(it);
    }
    map.lines.erase(id);
  }
}

namespace {

double mean_scene_depth(const MapState& map) {
  if (map.keyframes.empty()) return 1.0;
  const Pose& T = map.keyframes.rbegin()->second.pose;
  std::vector<double> depths;
  for (const auto& [id, line] : map.lines) {
    const Vec3 mid = 0.5 * (line.line.start_point + line.line.end_point);
    const double z = T.apply(mid).z();
    if (z > 0) depths.push_back(z);
  }
  for (const auto& [id, point] : map.points) {
    const double z = T.apply(point.position).z();
    if (z > 0) depths.push_back(z);
  }
  if (depths.empty()) return 1.0;
  return std::accumulate(depths.begin(), depths.end(), 0.0) /
         double(depths.size());
}

}  // namespace

void merge_3d_lines(MapState& map, const CameraIntrinsics& K,
                    const BackendConfig& cfg) {
  const double dist_gate = cfg.merge_dist_factor * mean_scene_depth(map);
  bool merged_any = true;
  while (merged_any) {
    merged_any = false;
    for (auto it1 = map.lines.begin(); it1 != map.lines.end() && !merged_any;
         ++it1) {
      for (auto it2 = std::next(it1); it2 != map.lines.end(); ++it2) {
        MapLine& a = it1->second;
        MapLine& b = it2->second;
        if (acute_angle(a.line.v, b.line.v) >
            cfg.collin3d_deg * M_PI / 180.0) {
          continue;
        }
        const Vec3 mid_a = 0.5 * (a.line.start_point + a.line.end_point);
        const Vec3 mid_b = 0.5 * (b.line.start_point + b.line.end_point);
        const double d = std::max(
            (a.line.closest_point(mid_b) - mid_b).norm(),
            (b.line.closest_point(mid_a) - mid_a).norm());
        if (d > dist_gate) continue;
        // Overlap of the endpoint intervals on the common direction; the
        // test is axial so opposite orientations merge too.
        const Vec3 axis = a.line.v.normalized();
        const double a0 = a.line.start_point.dot(axis);
        const double a1 = a.line.end_point.dot(axis);
        const double b0 = b.line.start_point.dot(axis);
        const double b1 = b.line.end_point.dot(axis);
        const double overlap = std::min(std::max(a0, a1), std::max(b0, b1)) -
                               std::max(std::min(a0, a1), std::min(b0, b1));
        if (overlap < 0) continue;

        MapLine& survivor =
            a.observations.size() >= b.observations.size() ? a : b;
        MapLine& absorbed =
            a.observations.size() >= b.observations.size() ? b : a;
        survivor.observations.insert(survivor.observations.end(),
                                     absorbed.observations.begin(),
                                     absorbed.observations.end());
        survivor.line = update_endpoints(survivor.line, survivor.observations,
                                         map.keyframes, K);
        const int absorbed_id = absorbed.id;
        const int survivor_id = survivor.id;
        for (auto& [flow, line_id] : map.flow_line_links) {
          if (line_id == absorbed_id) line_id = survivor_id;
        }
        map.lines.erase(absorbed_id);
        merged_any = true;
        break;
      }
    }
  }
}

void update_covisibility(MapState& map) {
  map.covisibility.clear();
  auto add_pairs = [&map](const std::vector<int>& kfs) {
    for (size_t i = 0; i < kfs.size(); ++i) {
      for (size_t j = i + 1; j < kfs.size(); ++j) {
        if (kfs[i] == kfs[j]) continue;
        ++map.covisibility[kfs[i]][kfs[j]];
        ++map.covisibility[kfs[j]][kfs[i]];
      }
    }
  };
  for (const auto& [id, point] : map.points) {
    std::vector<int> kfs;
    for (const auto& [kf, idx] : point.observations) kfs.push_back(kf);
    std::sort(kfs.begin(), kfs.end());
    kfs.erase(std::unique(kfs.begin(), kfs.end()), kfs.end());
    add_pairs(kfs);
  }
  for (const auto& [id, line] : map.lines) {
    std::vector<int> kfs;
    for (const LineObservation& obs : line.observations) {
      kfs.push_back(obs.kf_id);
    }
    std::sort(kfs.begin(), kfs.end());
    kfs.erase(std::unique(kfs.begin(), kfs.end()), kfs.end());
    add_pairs(kfs);
  }
}

LocalBaReport local_bundle_adjustment(MapState& map, int current_kf,
                                      const CameraIntrinsics& K,
                                      const BackendConfig& cfg) {
  LocalBaReport report;
  if (map.keyframes.size() < 2) return report;

  std::set<int> local{current_kf};
  const auto covis_it = map.covisibility.find(current_kf);
  if (covis_it != map.covisibility.end()) {
    for (const auto& [kf, weight] : covis_it->second) {
      if (weight >= cfg.covis_min_shared) local.insert(kf);
    }
  }

  // Landmarks observed from the local set.
  std::set<int> local_points, local_lines;
  for (const auto& [id, point] : map.points) {
    for (const auto& [kf, idx] : point.observations) {
      if (local.count(kf)) {
        local_points.insert(id);
        break;
      }
    }
  }
  for (const auto& [id, line] : map.lines) {
    for (const LineObservation& obs : line.observations) {
      if (local.count(obs.kf_id)) {
        local_lines.insert(id);
        break;
      }
    }
  }

  // Keyframes observing local landmarks but outside the local set anchor the
  // gauge; the earliest keyframe is always held fixed.
  std::set<int> anchors;
  for (int id : local_points) {
    for (const auto& [kf, idx] : map.points.at(id).observations) {
      if (!local.count(kf)) anchors.insert(kf);
    }
  }
  for (int id : local_lines) {
    for (const LineObservation& obs : map.lines.at(id).observations) {
      if (!local.count(obs.kf_id)) anchors.insert(obs.kf_id);
    }
  }
  const int first_kf = map.keyframes.begin()->first;

  Problem problem(K);
  std::map<int, int> pose_ids;
  for (int kf : local) {
    const bool fixed = kf == first_kf;
    pose_ids[kf] = problem.add_pose(map.keyframes.at(kf).pose, fixed);
  }
  for (int kf : anchors) {
    pose_ids[kf] = problem.add_pose(map.keyframes.at(kf).pose, true);
  }
  std::map<int, int> point_ids, line_ids;
  for (int id : local_points) {
    point_ids[id] = problem.add_point(map.points.at(id).position);
  }
  for (int id : local_lines) {
    line_ids[id] = problem.add_line(map.lines.at(id).line);
  }

  for (int id : local_points) {
    const MapPoint& point = map.points.at(id);
    for (const auto& [kf, idx] : point.observations) {
      if (!pose_ids.count(kf)) continue;
      ResidualBlock b;
      b.kind = ResidualKind::point;
      b.pose_a = pose_ids.at(kf);
      b.point = point_ids.at(id);
      b.obs_point = map.keyframes.at(kf).keypoints[idx].px;
      b.huber_scale = cfg.huber;
      problem.add_block(b);
    }
  }
  for (int id : local_lines) {
    const MapLine& line = map.lines.at(id);
    for (const LineObservation& obs : line.observations) {
      if (!pose_ids.count(obs.kf_id)) continue;
      ResidualBlock b;
      b.kind = ResidualKind::line;
      b.pose_a = pose_ids.at(obs.kf_id);
      b.line = line_ids.at(id);
      b.obs_e1 = obs.segment.start();
      b.obs_e2 = obs.segment.end();
      b.huber_scale = cfg.huber;
      problem.add_block(b);
    }
  }

  SolverOptions opts;
  opts.max_iterations = cfg.local_ba_iterations;
  report.solver = problem.solve(opts);

  for (const auto& [kf, pid] : pose_ids) {
    if (local.count(kf) && kf != first_kf) {
      map.keyframes.at(kf).pose = problem.pose(pid);
    }
  }
  for (const auto& [id, pid] : point_ids) {
    map.points.at(id).position = problem.point(pid);
  }
  for (const auto& [id, lid] : line_ids) {
    auto [n, v] = orthonormal_to_plucker(problem.line(lid));
    MapLine& line = map.lines.at(id);
    // Keep the stored orientation: the optimizer may hand back -v.
    if (v.dot(line.line.v) < 0) {
      n = -n;
      v = -v;
    }
    line.line.n = n;
    line.line.v = v;
    line.line =
        update_endpoints(line.line, line.observations, map.keyframes, K);
  }

  // Census: delete flows whose observations are mostly outliers now.
  for (auto it = map.lines.begin(); it != map.lines.end();) {
    MapLine& line = it->second;
    int outliers = 0;
    for (const LineObservation& obs : line.observations) {
      double r = 1e30;
      try {
        r = observation_residual(obs, line.line, map.keyframes, K);
      } catch (const DegenerateProjection&) {
      }
      if (r > cfg.reproj_outlier_px) ++outliers;
    }
    if (2 * outliers > int(line.observations.size())) {
      report.deleted_lines.push_back(it->first);
      for (auto link = map.flow_line_links.begin();
           link != map.flow_line_links.end();) {
        link = link->second == it->first ? map.flow_line_links.erase(link)
                                         : std::next(link);
      }
      it = map.lines.erase(it);
    } else {
      ++it;
    }
  }

  // Prune gross point observations.
  for (auto it = map.points.begin(); it != map.points.end();) {
    MapPoint& point = it->second;
    std::vector<std::pair<int, int>> kept;
    for (const auto& [kf, idx] : point.observations) {
      double r = 1e30;
      try {
        r = point_residual(map.keyframes.at(kf).keypoints[idx].px,
                           point.position, map.keyframes.at(kf).pose, K)
                .norm();
      } catch (const BehindCamera&) {
      }
      if (r <= cfg.point_reproj_px) {
        kept.push_back({kf, idx});
      } else {
        ++report.pruned_point_obs;
      }
    }
    point.observations = std::move(kept);
    it = point.observations.empty() ? map.points.erase(it) : std::next(it);
  }
  return report;
}

LoopClosureReport close_loop(MapState& map, const LoopConstraint& constraint,
                             const CameraIntrinsics& K,
                             const BackendConfig& cfg) {
  LoopClosureReport report;
  if (!map.keyframes.count(constraint.kf_i) ||
      !map.keyframes.count(constraint.kf_j)) {
    throw ConstraintInconsistent("loop constraint names unknown keyframes");
  }

  const std::map<int, Pose> old_poses = [&map]() {
    std::map<int, Pose> out;
    for (const auto& [id, kf] : map.keyframes) out[id] = kf.pose;
    return out;
  }();

  // Step 1: SE(3) pose graph over sequential, strong-covisibility and loop
  // edges. Odometry edges take their measurements from the current estimate.
  struct Edge {
    int i, j;
    Pose rel;  // T^o_ij
  };
  std::vector<Edge> edges;
  std::vector<int> kf_ids;
  for (const auto& [id, kf] : map.keyframes) kf_ids.push_back(id);
  for (size_t k = 1; k < kf_ids.size(); ++k) {
    const int i = kf_ids[k - 1];
    const int j = kf_ids[k];
    edges.push_back({i, j, old_poses.at(i) * old_poses.at(j).inverse()});
  }
  for (const auto& [i, row] : map.covisibility) {
    for (const auto& [j, weight] : row) {
      if (i >= j || weight < cfg.strong_covis_min_shared) continue;
      bool consecutive = false;
      for (size_t k = 1; k < kf_ids.size(); ++k) {
        if (kf_ids[k - 1] == i && kf_ids[k] == j) consecutive = true;
      }
      if (consecutive) continue;
      edges.push_back({i, j, old_poses.at(i) * old_poses.at(j).inverse()});
    }
  }
  std::vector<double> pre_residuals;
  for (const Edge& e : edges) {
    pre_residuals.push_back(
        pose_pose_residual(e.rel, old_poses.at(e.i), old_poses.at(e.j))
            .norm());
  }
  edges.push_back({constraint.kf_i, constraint.kf_j, constraint.relative});
  pre_residuals.push_back(pose_pose_residual(constraint.relative,
                                             old_poses.at(constraint.kf_i),
                                             old_poses.at(constraint.kf_j))
                              .norm());

  Problem graph(K);
  std::map<int, int> pose_ids;
  for (int id : kf_ids) {
    pose_ids[id] = graph.add_pose(map.keyframes.at(id).pose,
                                  id == kf_ids.front());
  }
  for (const Edge& e : edges) {
    ResidualBlock b;
    b.kind = ResidualKind::pose_pose;
    b.pose_a = pose_ids.at(e.i);
    b.pose_b = pose_ids.at(e.j);
    b.obs_rel = e.rel;
    b.huber_scale = cfg.huber;
    graph.add_block(b);
  }
  SolverOptions graph_opts;
  graph_opts.max_iterations = 100;
  report.pose_graph = graph.solve(graph_opts);

  // Sanity bound on the loop edge after optimization. Odometry edges are
  // consistent by construction, so the median is floored.
  std::nth_element(pre_residuals.begin(),
                   pre_residuals.begin() + pre_residuals.size() / 2,
                   pre_residuals.end());
  const double median_pre = pre_residuals[pre_residuals.size() / 2];
  const double bound = 10.0 * std::max(median_pre, 1e-3);
  const double loop_post =
      pose_pose_residual(constraint.relative,
                         graph.pose(pose_ids.at(constraint.kf_i)),
                         graph.pose(pose_ids.at(constraint.kf_j)))
          .norm();
  if (loop_post > bound) {
    throw ConstraintInconsistent("loop edge residual " +
                                 std::to_string(loop_post) +
                                 " exceeds sanity bound " +
                                 std::to_string(bound));
  }

  for (int id : kf_ids) {
    map.keyframes.at(id).pose = graph.pose(pose_ids.at(id));
  }

  // Landmark correction through each landmark's reference keyframe.
  for (auto& [id, point] : map.points) {
    if (point.observations.empty()) continue;
    const int ref = point.observations.front().first;
    const Pose& T_old = old_poses.at(ref);
    const Pose& T_new = map.keyframes.at(ref).pose;
    point.position = T_new.inverse().apply(T_old.apply(point.position));
  }
  for (auto& [id, line] : map.lines) {
    const int ref =
        line.observations.empty() ? line.ref_kf : line.observations.front().kf_id;
    if (!old_poses.count(ref)) continue;
    const Pose& T_old = old_poses.at(ref);
    const Pose& T_new = map.keyframes.at(ref).pose;
    line.line = transform_line(transform_line(line.line, T_old),
                               T_new.inverse());
  }

  // Step 2: joint Sim(3) bundle adjustment of all keyframes and landmarks.
  Problem ba(K);
  std::map<int, int> sim_ids, point_ids, line_ids;
  for (int id : kf_ids) {
    SimTransform S;
    S.s = 1.0;
    S.R = map.keyframes.at(id).pose.R;
    S.t = map.keyframes.at(id).pose.t;
    sim_ids[id] = ba.add_sim(S, id == kf_ids.front());
  }
  for (const auto& [id, point] : map.points) {
    point_ids[id] = ba.add_point(point.position);
  }
  for (const auto& [id, line] : map.lines) {
    line_ids[id] = ba.add_line(line.line);
  }
  for (const auto& [id, point] : map.points) {
    for (const auto& [kf, idx] : point.observations) {
      ResidualBlock b;
      b.kind = ResidualKind::sim3_point;
      b.sim = sim_ids.at(kf);
      b.point = point_ids.at(id);
      b.obs_point = map.keyframes.at(kf).keypoints[idx].px;
      b.huber_scale = cfg.huber;
      ba.add_block(b);
    }
  }
  for (const auto& [id, line] : map.lines) {
    for (const LineObservation& obs : line.observations) {
      ResidualBlock b;
      b.kind = ResidualKind::sim3_line;
      b.sim = sim_ids.at(obs.kf_id);
      b.line = line_ids.at(id);
      b.obs_e1 = obs.segment.start();
      b.obs_e2 = obs.segment.end();
      b.huber_scale = cfg.huber;
      ba.add_block(b);
    }
  }
  SolverOptions ba_opts;
  ba_opts.max_iterations = 50;
  report.sim3_ba = ba.solve(ba_opts);

  for (int id : kf_ids) {
    if (id == kf_ids.front()) continue;
    const SimTransform& S = ba.sim(sim_ids.at(id));
    map.keyframes.at(id).pose = {S.R, S.t};
  }
  for (auto& [id, point] : map.points) {
    point.position = ba.point(point_ids.at(id));
  }
  for (auto& [id, line] : map.lines) {
    auto [n, v] = orthonormal_to_plucker(ba.line(line_ids.at(id)));
    if (v.dot(line.line.v) < 0) {
      n = -n;
      v = -v;
    }
    line.line.n = n;
    line.line.v = v;
    line.line =
        update_endpoints(line.line, line.observations, map.keyframes, K);
  }

  // Outlier discard pass, as after local bundle adjustment.
  for (auto it = map.lines.begin(); it != map.lines.end();) {
    MapLine& line = it->second;
    int outliers = 0;
    for (const LineObservation& obs : line.observations) {
      double r = 1e30;
      try {
        r = observation_residual(obs, line.line, map.keyframes, K);
      } catch (const DegenerateProjection&) {
      }
      if (r > cfg.reproj_outlier_px) ++outliers;
    }
    if (2 * outliers > int(line.observations.size())) {
      report.deleted_lines.push_back(it->first);
      for (auto link = map.flow_line_links.begin();
           link != map.flow_line_links.end();) {
        link = link->second == it->first ? map.flow_line_links.erase(link)
                                         : std::next(link);
      }
      it = map.lines.erase(it);
    } else {
      ++it;
    }
  }
  return report;
}

void Backend::bootstrap(MapState initial_map) {
  map_ = std::move(initial_map);
  update_covisibility(map_);
  publish();
}

void Backend::process_queue() {
  while (!queue_.empty()) {
    const KeyframeSnapshot snapshot = std::move(queue_.front());
    queue_.pop_front();
    process(snapshot);
  }
}

std::vector<int> Backend::take_removed_flows() {
  std::vector<int> out(removed_flows_.begin(), removed_flows_.end());
  removed_flows_.clear();
  return out;
}

void Backend::process(const KeyframeSnapshot& snapshot) {
  const int kf_id = map_.next_kf_id++;
  KeyframeData kf;
  kf.id = kf_id;
  kf.frame_id = snapshot.frame_id;
  kf.timestamp = snapshot.timestamp;
  kf.pose = snapshot.pose;
  kf.keypoints = snapshot.keypoints;
  for (const FlowSnapshot& flow : snapshot.flows) {
    if (flow.observed) kf.line_obs.push_back({flow.flow_id, flow.segment});
  }
  map_.keyframes[kf_id] = kf;
  KeyframeData& stored = map_.keyframes[kf_id];

  // Register matched point observations.
  for (size_t i = 0; i < stored.keypoints.size(); ++i) {
    const int pid = stored.keypoints[i].point_id;
    if (pid >= 0 && map_.points.count(pid)) {
      map_.points[pid].observations.push_back({kf_id, int(i)});
    }
  }

  // Triangulate new points against recent keyframes by descriptor matching.
  std::vector<int> previous_kfs;
  for (const auto& [id, other] : map_.keyframes) {
    if (id != kf_id) previous_kfs.push_back(id);
  }
  const size_t recent = std::min<size_t>(previous_kfs.size(), 4);
  for (size_t r = previous_kfs.size() - recent; r < previous_kfs.size(); ++r) {
    KeyframeData& other = map_.keyframes[previous_kfs[r]];
    for (size_t i = 0; i < stored.keypoints.size(); ++i) {
      KeypointRecord& kp = stored.keypoints[i];
      if (kp.point_id >= 0) continue;
      int best = -1, best_dist = cfg_.descriptor_match_max + 1;
      for (size_t j = 0; j < other.keypoints.size(); ++j) {
        if (other.keypoints[j].point_id >= 0) continue;
        const int dist =
            hamming_distance(kp.descriptor, other.keypoints[j].descriptor);
        if (dist < best_dist) {
          best_dist = dist;
          best = int(j);
        }
      }
      if (best < 0) continue;
      const Vec2 q1 = K_.unproject(other.keypoints[best].px).head<2>();
      const Vec2 q2 = K_.unproject(kp.px).head<2>();
      const Vec3 X = triangulate_point(other.pose, stored.pose, q1, q2);
      if (!X.allFinite()) continue;
      const Vec3 c1 = other.pose.apply(X);
      const Vec3 c2 = stored.pose.apply(X);
      if (c1.z() <= 0.05 || c2.z() <= 0.05) continue;
      const double parallax =
          vec_angle(X - other.pose.center(), X - stored.pose.center());
      if (parallax < cfg_.min_parallax_deg * M_PI / 180.0) continue;
      if ((K_.project(c1) - other.keypoints[best].px).norm() >
              cfg_.new_point_reproj_px ||
          (K_.project(c2) - kp.px).norm() > cfg_.new_point_reproj_px) {
        continue;
      }
      MapPoint point;
      point.id = map_.next_point_id++;
      point.position = X;
      point.label = kp.label;
      point.observations = {{other.id, best}, {kf_id, int(i)}};
      other.keypoints[best].point_id = point.id;
      kp.point_id = point.id;
      map_.points[point.id] = point;
    }
  }

  // Line flows: extend mapped lines, triangulate pending ones.
  for (const FlowSnapshot& flow : snapshot.flows) {
    if (!flow.observed || dead_flows_.count(flow.flow_id)) continue;
    const auto link = map_.flow_line_links.find(flow.flow_id);
    if (link != map_.flow_line_links.end() &&
        map_.lines.count(link->second)) {
      MapLine& line = map_.lines[link->second];
      line.observations.push_back({kf_id, flow.segment});
      line.line = update_endpoints(line.line, line.observations,
                                   map_.keyframes, K_);
      continue;
    }
    auto& pending = pending_flows_[flow.flow_id];
    pending.push_back({kf_id, flow.segment});
    if (pending.size() < 2) continue;
    const TriangulationResult result =
        triangulate_flow(pending, map_.keyframes, K_, cfg_);
    if (result.remove_flow) {
      removed_flows_.insert(flow.flow_id);
      dead_flows_.insert(flow.flow_id);
      pending_flows_.erase(flow.flow_id);
    } else if (result.line) {
      MapLine line;
      line.id = map_.next_line_id++;
      line.line = *result.line;
      line.flow_id = flow.flow_id;
      line.ref_kf = pending.front().kf_id;
      line.observations = pending;
      map_.lines[line.id] = line;
      map_.flow_line_links[flow.flow_id] = line.id;
      pending_flows_.erase(flow.flow_id);
    }
  }

  update_covisibility(map_);

  if (stats_.last_update_keyframe < 0 ||
      kf_id - stats_.last_update_keyframe >= cfg_.uncertainty_period_kf) {
    stats_ = recompute_uncertainty_stats(map_, K_, kf_id);
    reject_outliers(map_, stats_, K_);
  }

  merge_3d_lines(map_, K_, cfg_);

  local_bundle_adjustment(map_, kf_id, K_, cfg_);
  // Flows whose map line was deleted by a census are terminated upstream.
  for (const FlowSnapshot& flow : snapshot.flows) {
    if (flow.line3d_id >= 0 && !map_.flow_line_links.count(flow.flow_id)) {
      removed_flows_.insert(flow.flow_id);
      dead_flows_.insert(flow.flow_id);
    }
  }

  update_covisibility(map_);
  publish();
}

void Backend::apply_loop_constraint(const LoopConstraint& constraint) {
  close_loop(map_, constraint, K_, cfg_);
  publish();
}

}  // namespace lf
