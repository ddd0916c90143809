#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <set>

#include "lf/map.hpp"
#include "lf/optimizer.hpp"

namespace lf {

struct BackendConfig {
  double plane_angle_min_deg = 1.0;
  double triang_outlier_frac = 0.9;   // flow removal census at creation
  double ba_outlier_frac = 0.5;       // flow deletion census after local BA
  double reproj_outlier_px = 2.0;     // per-endpoint line residual gate
  double point_reproj_px = 3.0;       // point observation prune after BA
  double collin3d_deg = 10.0;
  double merge_dist_factor = 0.02;    // x mean scene depth
  int covis_min_shared = 15;
  int strong_covis_min_shared = 30;   // extra pose-graph edges
  int uncertainty_period_kf = 10;
  double huber = 1.345;
  int local_ba_iterations = 30;
  double min_parallax_deg = 1.0;      // new point triangulation gate
  double new_point_reproj_px = 2.0;
  int descriptor_match_max = 64;
};

struct UncertaintyStats {
  double mu = 0.0;
  double sigma = 0.0;
  int last_update_keyframe = -1;
};

struct TriangulationResult {
  std::optional<Line3D> line;
  bool remove_flow = false;  // census failed: > 90% of the flow is outlier
};

// Plane-intersection triangulation of a flow from its two most recent
// keyframe observations, gated by the plane angle, followed by a
// reprojection census over the whole observation list.
TriangulationResult triangulate_flow(
    const std::vector<LineObservation>& observations,
    const std::map<int, KeyframeData>& keyframes, const CameraIntrinsics& K,
    const BackendConfig& cfg);

// Endpoint maintenance: every 2D endpoint back-projects to its closest point
// on the infinite line; start/terminal means become the stored endpoints.
// Observations whose rays are parallel to the line are skipped.
Line3D update_endpoints(const Line3D& line,
                        const std::vector<LineObservation>& observations,
                        const std::map<int, KeyframeData>& keyframes,
                        const CameraIntrinsics& K);

// 3D displacement per pixel of image perturbation at endpoint e (the
// half-pixel probe construction). Throws RayParallel.
double endpoint_uncertainty(const Vec2& e, const Line3D& line, const Pose& T,
                            const CameraIntrinsics& K);

UncertaintyStats recompute_uncertainty_stats(const MapState& map,
                                             const CameraIntrinsics& K,
                                             int current_kf);

// Removes line observations with any endpoint uncertainty above
// mu + 3 sigma (strict), re-running endpoint maintenance on survivors.
void reject_outliers(MapState& map, const UncertaintyStats& stats,
                     const CameraIntrinsics& K);

// Merges collinear overlapping 3D lines; the larger observation set absorbs
// the smaller. Observation counts are conserved.
void merge_3d_lines(MapState& map, const CameraIntrinsics& K,
                    const BackendConfig& cfg);

void update_covisibility(MapState& map);

struct LocalBaReport {
  SolverReport solver;
  std::vector<int> deleted_lines;
  int pruned_point_obs = 0;
};

// Local bundle adjustment around a keyframe: connected keyframes and their
// landmarks move, anchor keyframes stay fixed; outlier flows (more than half
// bad observations) are deleted and endpoints refreshed.
LocalBaReport local_bundle_adjustment(MapState& map, int current_kf,
                                      const CameraIntrinsics& K,
                                      const BackendConfig& cfg);

struct LoopConstraint {
  int kf_i = -1;
  int kf_j = -1;
  double s = 1.0;  // scale of the observed similarity, 1 for SE(3)
  Pose relative;   // T^o_ij, satisfied when it equals T_i * T_j^-1
};

struct LoopClosureReport {
  SolverReport pose_graph;
  SolverReport sim3_ba;
  std::vector<int> deleted_lines;
};

// Two-step loop closure: SE(3) pose graph over sequential, strong-covisibility
// and loop edges, landmark correction through reference keyframes, then a
// joint Sim(3) bundle adjustment and an outlier discard pass.
// Throws ConstraintInconsistent when the loop edge disagrees wildly with the
// graph after step one.
LoopClosureReport close_loop(MapState& map, const LoopConstraint& constraint,
                             const CameraIntrinsics& K,
                             const BackendConfig& cfg);

// Synchronous mapping worker: consumes keyframe snapshots, maintains the
// map, publishes immutable snapshots.
class Backend {
 public:
  Backend(const CameraIntrinsics& K, const BackendConfig& cfg)
      : K_(K), cfg_(cfg), published_(std::make_shared<MapState>()) {}

  // Seeds the map from two-view initialization.
  void bootstrap(MapState initial_map);

  void enqueue(KeyframeSnapshot snapshot) {
    queue_.push_back(std::move(snapshot));
  }
  // Drains the snapshot queue; one mapping round per keyframe.
  void process_queue();

  void apply_loop_constraint(const LoopConstraint& constraint);

  std::shared_ptr<const MapState> published() const { return published_; }
  // Flows whose map line was discarded since the last call.
  std::vector<int> take_removed_flows();

  const MapState& map() const { return map_; }
  MapState& mutable_map() { return map_; }

 private:
  void process(const KeyframeSnapshot& snapshot);
  void publish() { published_ = std::make_shared<MapState>(map_); }

  CameraIntrinsics K_;
  BackendConfig cfg_;
  MapState map_;
  UncertaintyStats stats_;
  std::deque<KeyframeSnapshot> queue_;
  std::shared_ptr<const MapState> published_;
  std::map<int, std::vector<LineObservation>> pending_flows_;
  std::set<int> removed_flows_;
  std::set<int> dead_flows_;  // removed or absorbed, never re-triangulated
};

}  // namespace lf
