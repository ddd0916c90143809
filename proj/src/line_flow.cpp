#include "lf/line_flow.hpp"

#include <algorithm>
#include <cmath>

namespace lf {

MotionModel2D fit_motion_2d(const LineFlow& flow, int t_w) {
  const int n = int(flow.history.size());
  const int tail = std::min(n, t_w);
  if (tail < 2) throw InsufficientHistory();
  MotionModel2D model;
  for (int i = n - tail + 1; i < n; ++i) {
    const LineSegment2D& prev = flow.history[i - 1].segment;
    const LineSegment2D& cur = flow.history[i].segment;
    model.delta[0] += wrap_angle(cur.theta - prev.theta);
    model.delta[1] += cur.length - prev.length;
    model.delta[2] += cur.mid.x() - prev.mid.x();
    model.delta[3] += cur.mid.y() - prev.mid.y();
  }
  model.delta /= double(tail - 1);
  model.delta[0] = wrap_angle(model.delta[0]);
  model.fitted = true;
  return model;
}

LineSegment2D predict_2d(const LineFlow& flow, const FlowConfig& cfg) {
  const LineSegment2D& last = flow.last().segment;
  LineSegment2D g;
  g.theta = wrap_angle_2pi(last.theta + flow.motion2d.delta[0]);
  g.length = std::max(last.length + flow.motion2d.delta[1], cfg.min_length);
  g.mid = last.mid + Vec2(flow.motion2d.delta[2], flow.motion2d.delta[3]);
  return g;
}

std::optional<LineSegment2D> predict_3d(const Line3D& line, const Pose& T_pred,
                                        const CameraIntrinsics& K, int width,
                                        int height, double depth_min,
                                        double margin_px) {
  const Vec3 qs = T_pred.apply(line.start_point);
  const Vec3 qt = T_pred.apply(line.end_point);
  if (qs.z() <= depth_min || qt.z() <= depth_min) return std::nullopt;
  const Vec2 es = K.project(qs);
  const Vec2 et = K.project(qt);
  for (const Vec2& e : {es, et}) {
    if (e.x() < -margin_px || e.y() < -margin_px ||
        e.x() > width - 1 + margin_px || e.y() > height - 1 + margin_px) {
      return std::nullopt;
    }
  }
  if ((es - et).norm() < 1e-6) return std::nullopt;
  return params_from_endpoints(es, et);
}

LineSegment2D fuse_predictions(const std::optional<LineSegment2D>& g,
                               const std::optional<LineSegment2D>& h) {
  if (!g && !h) throw BothAbsent();
  if (!h) return *g;
  if (!g) return *h;
  const double wh = h->length / (h->length + g->length);
  const double wg = 1.0 - wh;
  LineSegment2D out;
  const Vec2 dir = wh * h->direction() + wg * g->direction();
  out.theta = wrap_angle_2pi(std::atan2(dir.y(), dir.x()));
  out.length = wh * h->length + wg * g->length;
  out.mid = wh * h->mid + wg * g->mid;
  return out;
}

double refine_length(double observed_length, double mean_length, double beta) {
  return std::clamp(observed_length, beta * mean_length, mean_length / beta);
}

double mean_observed_length(const LineFlow& flow, int window) {
  double sum = 0;
  int count = 0;
  for (auto it = flow.history.rbegin();
       it != flow.history.rend() && count < window; ++it) {
    if (it->source != ObsSource::observed) continue;
    sum += it->segment.length;
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

void update_flow(LineFlow& flow, long frame_id,
                 const std::optional<LineSegment2D>& observation,
                 const LineSegment2D& fused_prediction,
                 const FlowConfig& cfg) {
  if (!flow.alive() || frame_id != flow.last_frame() + 1) {
    throw FrameGap();
  }
  if (observation) {
    LineSegment2D seg = *observation;
    const double mean = mean_observed_length(flow, cfg.mean_length_window);
    if (mean > 0) seg.length = refine_length(seg.length, mean, cfg.beta);
    flow.history.push_back({frame_id, seg, ObsSource::observed});
    flow.reserve_count = 0;
    flow.state = FlowState::active;
    return;
  }
  ++flow.reserve_count;
  if (flow.reserve_count > cfg.alpha) {
    flow.state = FlowState::terminated;
    while (!flow.history.empty() &&
           flow.history.back().source == ObsSource::predicted) {
      flow.history.pop_back();
    }
    return;
  }
  flow.history.push_back({frame_id, fused_prediction, ObsSource::predicted});
  flow.state = FlowState::reserved;
}

int angle_bucket(double theta) {
  return int(wrap_angle_2pi(theta) / (M_PI / 6.0)) % 12;
}

bool buckets_adjacent(int a, int b) {
  const int d = std::abs(a - b);
  return d <= 1 || d == 11;
}

std::optional<LineFlow> merge_flows_2d(const LineFlow& a, const LineFlow& b,
                                       const FlowConfig& cfg) {
  if (!a.alive() || !b.alive()) return std::nullopt;
  if (a.last_frame() != b.last_frame()) return std::nullopt;
  if (a.line3d_id >= 0 && b.line3d_id >= 0 && a.line3d_id != b.line3d_id) {
    // Two mapped lines are the back-end merger's business.
    return std::nullopt;
  }
  const LineFlow& older = a.id <= b.id ? a : b;
  const LineFlow& newer = a.id <= b.id ? b : a;

  if (!buckets_adjacent(angle_bucket(older.last().segment.theta),
                        angle_bucket(newer.last().segment.theta))) {
    return std::nullopt;
  }

  // Per-frame collinearity over the overlapping frames.
  const long overlap_begin = std::max(older.first_frame, newer.first_frame);
  const long overlap_end = older.last_frame();
  int overlap_count = 0;
  int collinear_count = 0;
  for (long f = overlap_begin; f <= overlap_end; ++f) {
    const LineSegment2D& sa = older.history[f - older.first_frame].segment;
    const LineSegment2D& sb = newer.history[f - newer.first_frame].segment;
    ++overlap_count;
    if (angle_distance(sa.theta, sb.theta) > cfg.collin2d()) continue;
    const double d = std::max(point_to_segment_line_distance(sb.mid, sa),
                              point_to_segment_line_distance(sa.mid, sb));
    if (d > cfg.merge_perp_dist) continue;
    ++collinear_count;
  }
  if (overlap_count == 0 || 2 * collinear_count <= overlap_count) {
    return std::nullopt;
  }

  // Current segments must overlap along the shared direction.
  {
    const LineSegment2D& sa = older.last().segment;
    const LineSegment2D& sb = newer.last().segment;
    const Vec2 dir =
        (sa.length * sa.direction() + sb.length * sb.direction()).normalized();
    const double a0 = (sa.start() - sa.mid).dot(dir);
    const double a1 = (sa.end() - sa.mid).dot(dir);
    const double b0 = (sb.start() - sa.mid).dot(dir);
    const double b1 = (sb.end() - sa.mid).dot(dir);
    const double overlap = std::min(std::max(a0, a1), std::max(b0, b1)) -
                           std::max(std::min(a0, a1), std::min(b0, b1));
    if (overlap < cfg.overlap_px) return std::nullopt;
  }

  LineFlow merged;
  merged.id = older.id;
  merged.first_frame = std::min(older.first_frame, newer.first_frame);
  merged.state = FlowState::active;
  merged.line3d_id = older.line3d_id >= 0 ? older.line3d_id : newer.line3d_id;
  for (long f = merged.first_frame; f <= overlap_end; ++f) {
    const FlowEntry* ea = f >= older.first_frame
                              ? &older.history[f - older.first_frame]
                              : nullptr;
    const FlowEntry* eb = f >= newer.first_frame
                              ? &newer.history[f - newer.first_frame]
                              : nullptr;
    FlowEntry entry;
    entry.frame_id = f;
    if (ea && eb) {
      entry.segment = fuse_segments_span(ea->segment, eb->segment);
      entry.source = (ea->source == ObsSource::observed ||
                      eb->source == ObsSource::observed)
                         ? ObsSource::observed
                         : ObsSource::predicted;
    } else {
      entry = ea ? *ea : *eb;
    }
    merged.history.push_back(entry);
  }
  // Recoup the reserving state from the trailing predicted run.
  merged.reserve_count = 0;
  for (auto it = merged.history.rbegin(); it != merged.history.rend(); ++it) {
    if (it->source != ObsSource::predicted) break;
    ++merged.reserve_count;
  }
  merged.state =
      merged.reserve_count > 0 ? FlowState::reserved : FlowState::active;
  try {
    merged.motion2d = fit_motion_2d(merged, 5);
  } catch (const InsufficientHistory&) {
  }
  return merged;
}

}  // namespace lf
