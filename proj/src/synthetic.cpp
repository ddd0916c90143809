#include "lf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lf {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Liang-Barsky clip of a 2D segment to [0,w-1]x[0,h-1].
bool clip_to_image(Vec2& a, Vec2& b, int w, int h) {
  double t0 = 0.0, t1 = 1.0;
  const Vec2 d = b - a;
  const double bounds[4][2] = {{-d.x(), a.x() - 0.0},
                               {d.x(), (w - 1.0) - a.x()},
                               {-d.y(), a.y() - 0.0},
                               {d.y(), (h - 1.0) - a.y()}};
  for (auto& e : bounds) {
    const double p = e[0], q = e[1];
    if (std::abs(p) < 1e-15) {
      if (q < 0) return false;
      continue;
    }
    const double r = q / p;
    if (p < 0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return false;
  }
  const Vec2 a0 = a;
  a = a0 + t0 * d;
  b = a0 + t1 * d;
  return true;
}

Pose orbit_pose(const SceneSpec& spec, int frame) {
  const Vec3 center = 0.5 * (spec.room_min + spec.room_max);
  const double phi =
      2.0 * M_PI * spec.orbit_turns * double(frame) / double(spec.num_frames);
  const Vec3 C(center.x() + spec.orbit_radius * std::cos(phi),
               center.y() + spec.orbit_radius * std::sin(phi),
               spec.camera_height);
  const Vec3 forward(std::cos(phi), std::sin(phi), 0.0);
  const Vec3 up(0, 0, 1);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = -up;
  Mat3 R_cw;
  R_cw.col(0) = right;
  R_cw.col(1) = down;
  R_cw.col(2) = forward;
  Pose T;
  T.R = R_cw.transpose();
  T.t = -T.R * C;
  return T;
}

}  // namespace

bool project_segment(const Segment3D& seg, const Pose& T,
                     const CameraIntrinsics& K, int width, int height,
                     Vec2* a_px, Vec2* b_px) {
  const double z_near = 0.2;
  Vec3 a = T.apply(seg.a);
  Vec3 b = T.apply(seg.b);
  if (a.z() < z_near && b.z() < z_near) return false;
  if (a.z() < z_near || b.z() < z_near) {
    const double t = (z_near - a.z()) / (b.z() - a.z());
    const Vec3 cut = a + t * (b - a);
    (a.z() < z_near ? a : b) = cut;
  }
  Vec2 pa = K.project(a);
  Vec2 pb = K.project(b);
  if (!clip_to_image(pa, pb, width, height)) return false;
  *a_px = pa;
  *b_px = pb;
  return true;
}

void draw_segment(ImageF& img, const Vec2& a, const Vec2& b, double width,
                  float color) {
  const double half = width / 2.0;
  const int x0 =
      std::max(0, int(std::floor(std::min(a.x(), b.x()) - half - 1)));
  const int x1 = std::min(img.width - 1,
                          int(std::ceil(std::max(a.x(), b.x()) + half + 1)));
  const int y0 =
      std::max(0, int(std::floor(std::min(a.y(), b.y()) - half - 1)));
  const int y1 = std::min(img.height - 1,
                          int(std::ceil(std::max(a.y(), b.y()) + half + 1)));
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p(x, y);
      double t = len2 > 1e-12 ? (p - a).dot(d) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double dist = (p - (a + t * d)).norm();
      const double cov = std::clamp(half + 0.5 - dist, 0.0, 1.0);
      if (cov <= 0) continue;
      const float value = img.at(x, y) + float(cov) * (color - img.at(x, y));
      img.at(x, y) = std::min(img.at(x, y), value);
    }
  }
}

void draw_dot(ImageF& img, const Vec2& center, double radius, float color) {
  draw_segment(img, center, center, 2 * radius, color);
}

SyntheticScene generate_synthetic_scene(const SceneSpec& spec) {
  SyntheticScene scene;
  scene.spec = spec;

  const Vec3& lo = spec.room_min;
  const Vec3& hi = spec.room_max;
  const Vec3 corners[8] = {{lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()},
                           {hi.x(), hi.y(), lo.z()}, {lo.x(), hi.y(), lo.z()},
                           {lo.x(), lo.y(), hi.z()}, {hi.x(), lo.y(), hi.z()},
                           {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()}};
  const int edges[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                            {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (int i = 0; i < 12; ++i) {
    scene.wireframe.push_back({corners[edges[i][0]], corners[edges[i][1]], i});
  }

  // Points scattered over the four walls.
  std::mt19937_64 rng(splitmix64(spec.seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < spec.num_points; ++i) {
    const int wall = int(u01(rng) * 4) % 4;
    const double s = u01(rng);
    const double z = lo.z() + u01(rng) * (hi.z() - lo.z());
    Vec3 p;
    switch (wall) {
      case 0: p = {lo.x() + s * (hi.x() - lo.x()), lo.y(), z}; break;
      case 1: p = {hi.x(), lo.y() + s * (hi.y() - lo.y()), z}; break;
      case 2: p = {lo.x() + s * (hi.x() - lo.x()), hi.y(), z}; break;
      default: p = {lo.x(), lo.y() + s * (hi.y() - lo.y()), z}; break;
    }
    scene.points.push_back(p);
  }

  scene.truth.resize(spec.num_frames);
  for (int f = 0; f < spec.num_frames; ++f) {
    FrameTruth& truth = scene.truth[f];
    truth.timestamp = f / spec.fps;
    truth.pose = orbit_pose(spec, f);
    std::mt19937_64 frame_rng(splitmix64(spec.seed ^ (0x5eedull + f)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uu(0.0, 1.0);

    for (const Segment3D& seg : scene.wireframe) {
      Vec2 a, b;
      if (!project_segment(seg, truth.pose, spec.intrinsics, spec.width,
                           spec.height, &a, &b)) {
        continue;
      }
      if ((a - b).norm() < spec.min_segment_px) continue;
      SegmentObservation obs;
      obs.source_id = seg.id;
      obs.exact = params_from_endpoints(a, b);
      obs.noisy_a =
          a + spec.pixel_noise * Vec2(gauss(frame_rng), gauss(frame_rng));
      obs.noisy_b =
          b + spec.pixel_noise * Vec2(gauss(frame_rng), gauss(frame_rng));
      obs.dropped = uu(frame_rng) < spec.dropout;
      for (const OcclusionEvent& ev : spec.occlusions) {
        if (ev.segment_id == seg.id && f >= ev.frame_begin &&
            f < ev.frame_end) {
          obs.occluded = true;
        }
      }
      truth.segments.push_back(obs);
    }

    for (size_t i = 0; i < scene.points.size(); ++i) {
      const Vec3 q = truth.pose.apply(scene.points[i]);
      if (q.z() < 0.2) continue;
      const Vec2 px = spec.intrinsics.project(q);
      if (px.x() < 2 || px.y() < 2 || px.x() > spec.width - 3 ||
          px.y() > spec.height - 3) {
        continue;
      }
      PointObservation obs;
      obs.source_id = int(i);
      obs.exact = px;
      obs.noisy =
          px + spec.pixel_noise * Vec2(gauss(frame_rng), gauss(frame_rng));
      obs.dropped = uu(frame_rng) < spec.dropout;
      truth.points.push_back(obs);
    }
  }
  return scene;
}

ImageF SyntheticScene::render_frame(int index) const {
  const FrameTruth& frame = truth[index];
  ImageF img(spec.width, spec.height, spec.background);

  for (const SegmentObservation& obs : frame.segments) {
    if (obs.dropped) continue;
    // Active occlusion intervals split the stroke into fragments.
    std::vector<std::pair<double, double>> visible = {{0.0, 1.0}};
    for (const OcclusionEvent& ev : spec.occlusions) {
      if (ev.segment_id != obs.source_id || index < ev.frame_begin ||
          index >= ev.frame_end) {
        continue;
      }
      std::vector<std::pair<double, double>> next;
      for (auto [s0, s1] : visible) {
        if (ev.t1 <= s0 || ev.t0 >= s1) {
          next.push_back({s0, s1});
          continue;
        }
        if (ev.t0 > s0) next.push_back({s0, std::min(ev.t0, s1)});
        if (ev.t1 < s1) next.push_back({std::max(ev.t1, s0), s1});
      }
      visible = std::move(next);
    }
    for (auto [s0, s1] : visible) {
      const Vec2 a = obs.noisy_a + s0 * (obs.noisy_b - obs.noisy_a);
      const Vec2 b = obs.noisy_a + s1 * (obs.noisy_b - obs.noisy_a);
      if ((a - b).norm() < 1.0) continue;
      draw_segment(img, a, b, spec.stroke_width, spec.foreground);
    }
  }
  for (const PointObservation& obs : frame.points) {
    if (obs.dropped) continue;
    draw_dot(img, obs.noisy, 1.3, spec.foreground);
  }
  for (const BlurEvent& ev : spec.blurs) {
    if (index >= ev.frame_begin && index < ev.frame_end) {
      img = box_blur(img, ev.radius);
    }
  }
  return img;
}

double SyntheticScene::trajectory_length() const {
  double length = 0;
  for (size_t i = 1; i < truth.size(); ++i) {
    length += (truth[i].pose.center() - truth[i - 1].pose.center()).norm();
  }
  return length;
}

}  // namespace lf
