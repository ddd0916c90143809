#pragma once

#include <map>
#include <vector>

#include "lf/features.hpp"
#include "lf/geometry.hpp"

namespace lf {

struct KeypointRecord {
  Vec2 px = Vec2::Zero();
  Descriptor descriptor{};
  int label = -1;     // oracle source id when injected
  int point_id = -1;  // matched map point, -1 if none
};

struct LineObsRecord {
  int flow_id = -1;
  LineSegment2D segment;
};

struct KeyframeData {
  int id = -1;
  long frame_id = -1;
  double timestamp = 0.0;
  Pose pose;
  std::vector<KeypointRecord> keypoints;
  std::vector<LineObsRecord> line_obs;
};

struct MapPoint {
  int id = -1;
  Vec3 position = Vec3::Zero();
  int label = -1;
  std::vector<std::pair<int, int>> observations;  // (kf_id, keypoint index)
};

struct LineObservation {
  int kf_id = -1;
  LineSegment2D segment;
};

struct MapLine {
  int id = -1;
  Line3D line;
  int flow_id = -1;  // owning flow
  int ref_kf = -1;
  std::vector<LineObservation> observations;
};

// Shared map: keyframes, landmarks, covisibility. Value type; the back-end
// publishes immutable copies.
struct MapState {
  std::map<int, KeyframeData> keyframes;
  std::map<int, MapPoint> points;
  std::map<int, MapLine> lines;
  // Symmetric covisibility weights (shared landmark counts).
  std::map<int, std::map<int, int>> covisibility;
  // Flow id -> map line id, including non-owning references left behind by
  // 3D merging.
  std::map<int, int> flow_line_links;
  int next_kf_id = 0;
  int next_point_id = 0;
  int next_line_id = 0;

  const MapLine* line_for_flow(int flow_id) const {
    const auto it = flow_line_links.find(flow_id);
    if (it == flow_line_links.end()) return nullptr;
    const auto line_it = lines.find(it->second);
    return line_it == lines.end() ? nullptr : &line_it->second;
  }
};

// Immutable copy of the per-keyframe front-end state handed to the back-end.
struct FlowSnapshot {
  int flow_id = -1;
  LineSegment2D segment;
  bool observed = false;  // an actual observation, not a predicted entry
  int line3d_id = -1;
};

struct KeyframeSnapshot {
  long frame_id = -1;
  double timestamp = 0.0;
  Pose pose;
  std::vector<KeypointRecord> keypoints;
  std::vector<FlowSnapshot> flows;
};

}  // namespace lf
