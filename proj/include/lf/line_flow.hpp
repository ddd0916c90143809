#pragma once

#include <optional>
#include <vector>

#include "lf/geometry.hpp"

namespace lf {

enum class FlowState { active, reserved, terminated };
enum class ObsSource { observed, predicted };

struct FlowEntry {
  long frame_id = -1;
  LineSegment2D segment;
  ObsSource source = ObsSource::observed;
};

// Constant per-frame parameter delta (d_theta, d_length, dx, dy).
struct MotionModel2D {
  Vec4 delta = Vec4::Zero();
  bool fitted = false;
};

struct FlowConfig {
  int alpha = 3;           // reserving period, frames
  double beta = 0.8;       // length-change ratio
  int n_cl = 5;            // full-scan period, frames
  int t_w = 5;             // fitting window, frames
  double collin2d_deg = 5.0;
  double collin3d_deg = 10.0;
  double overlap_px = 5.0;
  double min_length = 8.0;        // floor for degenerate predicted lengths
  double merge_perp_dist = 2.0;   // px, midpoint-to-line collinearity gate
  int mean_length_window = 10;

  double collin2d() const { return collin2d_deg * M_PI / 180.0; }
  double collin3d() const { return collin3d_deg * M_PI / 180.0; }
};

// The temporal sequence of 2D segments tied to one 3D line, kept gap-free
// from the first observation while the flow is alive.
struct LineFlow {
  int id = -1;
  long first_frame = -1;
  std::vector<FlowEntry> history;
  FlowState state = FlowState::active;
  int reserve_count = 0;
  MotionModel2D motion2d;
  int line3d_id = -1;

  bool alive() const { return state != FlowState::terminated; }
  const FlowEntry& last() const { return history.back(); }
  long last_frame() const { return history.back().frame_id; }
};

// Mean of wrapped per-frame parameter differences over the last t_w entries.
// Throws InsufficientHistory with fewer than two entries in the tail.
MotionModel2D fit_motion_2d(const LineFlow& flow, int t_w);

// g = last segment + motion delta, theta wrapped, length floored.
LineSegment2D predict_2d(const LineFlow& flow, const FlowConfig& cfg);

// Projection of the 3D endpoints under the predicted pose; none when an
// endpoint is too close to the camera or far outside the image.
std::optional<LineSegment2D> predict_3d(const Line3D& line, const Pose& T_pred,
                                        const CameraIntrinsics& K, int width,
                                        int height, double depth_min = 0.05,
                                        double margin_px = 64.0);

// Length-weighted fusion of the 2D and 3D predictions (componentwise, with
// the angle averaged on unit direction vectors). Throws BothAbsent.
LineSegment2D fuse_predictions(const std::optional<LineSegment2D>& g,
                               const std::optional<LineSegment2D>& h);

// Clamps an observed length into [beta * mean, mean / beta].
double refine_length(double observed_length, double mean_length, double beta);

// Mean length of the most recent observed entries (window-limited).
double mean_observed_length(const LineFlow& flow, int window);

// Appends the frame's observation (length-refined) or the fused prediction;
// terminates the flow past the reserving period, dropping the trailing
// predicted entries. Throws FrameGap on non-contiguous frames or terminated
// flows.
void update_flow(LineFlow& flow, long frame_id,
                 const std::optional<LineSegment2D>& observation,
                 const LineSegment2D& fused_prediction, const FlowConfig& cfg);

// Fuses two flows tracking the same line: more than half of the overlapping
// entries collinear and the current segments overlapping along the shared
// direction. The merged flow keeps the smaller id. Returns none when not
// mergeable.
std::optional<LineFlow> merge_flows_2d(const LineFlow& a, const LineFlow& b,
                                       const FlowConfig& cfg);

// 30-degree angle-grid bucket of a directed segment, for merge prefiltering.
int angle_bucket(double theta);
bool buckets_adjacent(int a, int b);

}  // namespace lf
