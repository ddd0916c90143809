#include "lf/line_extraction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace lf {

LevelLineField compute_level_line_field(const ImageF& image,
                                        double grad_threshold) {
  if (image.width < 3 || image.height < 3) {
    throw ImageTooSmall("level-line field needs at least 3x3");
  }
  LevelLineField field;
  field.width = image.width;
  field.height = image.height;
  const size_t n = size_t(field.width) * field.height;
  field.angle.assign(n, 0.f);
  field.magnitude.assign(n, 0.f);
  field.defined.assign(n, 0);
  field.used.assign(n, 0);
  field.touched.assign(n, 0);

  for (int y = 0; y < image.height - 1; ++y) {
    for (int x = 0; x < image.width - 1; ++x) {
      // 2x2 difference stencil.
      const float i00 = image.at(x, y);
      const float i10 = image.at(x + 1, y);
      const float i01 = image.at(x, y + 1);
      const float i11 = image.at(x + 1, y + 1);
      const double gx = 0.5 * (i10 - i00 + i11 - i01);
      const double gy = 0.5 * (i01 - i00 + i11 - i10);
      const double mag = std::hypot(gx, gy);
      const size_t idx = field.index(x, y);
      field.magnitude[idx] = float(mag);
      if (mag > grad_threshold) {
        // Level-line direction: the gradient rotated by 90 degrees.
        field.angle[idx] = float(fold_angle_pi(std::atan2(gx, -gy)));
        field.defined[idx] = 1;
      }
    }
  }
  return field;
}

namespace {

struct AxialMean {
  double sx = 0, sy = 0;
  void add(double angle) {
    sx += std::cos(2 * angle);
    sy += std::sin(2 * angle);
  }
  double angle() const { return fold_angle_pi(0.5 * std::atan2(sy, sx)); }
};

struct RectFrame {
  Vec2 center;
  Vec2 u;  // along the prediction
  Vec2 n;  // across
  double half_len;
  double half_wid;
  bool contains(const Vec2& p) const {
    const Vec2 r = p - center;
    return std::abs(r.dot(u)) <= half_len && std::abs(r.dot(n)) <= half_wid;
  }
};

// Core growth loop. `local_used` (when given) overlays the shared mask so a
// caller can roll rejected regions back; `rect` (when given) confines growth.
LineSupportRegion grow_region_impl(LevelLineField& field,
                                   const Eigen::Vector2i& seed, double tau,
                                   const RectFrame* rect,
                                   std::vector<uint8_t>* local_used) {
  auto is_used = [&](size_t idx) {
    return field.used[idx] || (local_used && (*local_used)[idx]);
  };
  auto mark_used = [&](size_t idx) {
    if (local_used) {
      (*local_used)[idx] = 1;
    } else {
      field.used[idx] = 1;
    }
  };

  const size_t seed_idx = field.index(seed.x(), seed.y());
  field.touch(seed.x(), seed.y());
  if (!field.inside(seed.x(), seed.y()) || !field.defined[seed_idx] ||
      is_used(seed_idx)) {
    throw SeedInvalid();
  }

  LineSupportRegion region;
  AxialMean mean;
  std::vector<Eigen::Vector2i> stack{seed};
  mark_used(seed_idx);
  mean.add(field.angle[seed_idx]);
  region.pixels.push_back(seed);

  while (!stack.empty()) {
    const Eigen::Vector2i p = stack.back();
    stack.pop_back();
    const double region_angle = mean.angle();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int x = p.x() + dx;
        const int y = p.y() + dy;
        if (!field.inside(x, y)) continue;
        if (rect && !rect->contains(Vec2(x, y))) continue;
        field.touch(x, y);
        const size_t idx = field.index(x, y);
        if (!field.defined[idx] || is_used(idx)) continue;
        if (axial_distance(field.angle[idx], region_angle) > tau) continue;
        mark_used(idx);
        mean.add(field.angle[idx]);
        region.pixels.push_back({x, y});
        stack.push_back({x, y});
      }
    }
  }
  region.region_angle = mean.angle();
  return region;
}

}  // namespace

LineSupportRegion grow_region(LevelLineField& field,
                              const Eigen::Vector2i& seed, double tau) {
  return grow_region_impl(field, seed, tau, nullptr, nullptr);
}

RegionFit rectangle_from_region(const LineSupportRegion& region,
                                const LevelLineField& field,
                                int min_region_pixels) {
  if (int(region.pixels.size()) < min_region_pixels) {
    throw RegionTooSmall();
  }
  double wsum = 0;
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : region.pixels) {
    const double w = field.magnitude[field.index(p.x(), p.y())];
    wsum += w;
    centroid += w * Vec2(p.x(), p.y());
  }
  centroid /= wsum;

  double mxx = 0, mxy = 0, myy = 0;
  for (const auto& p : region.pixels) {
    const double w = field.magnitude[field.index(p.x(), p.y())];
    const Vec2 d = Vec2(p.x(), p.y()) - centroid;
    mxx += w * d.x() * d.x();
    mxy += w * d.x() * d.y();
    myy += w * d.y() * d.y();
  }
  // Principal axis of the 2x2 scatter matrix.
  const double diff = mxx - myy;
  const double main_angle =
      fold_angle_pi(0.5 * std::atan2(2 * mxy, diff));

  const Vec2 axis(std::cos(main_angle), std::sin(main_angle));
  const Vec2 perp(-axis.y(), axis.x());
  double smin = 1e300, smax = -1e300, tmin = 1e300, tmax = -1e300;
  for (const auto& p : region.pixels) {
    const Vec2 d = Vec2(p.x(), p.y()) - centroid;
    const double s = d.dot(axis);
    const double t = d.dot(perp);
    smin = std::min(smin, s);
    smax = std::max(smax, s);
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }

  RegionFit fit;
  fit.rect.center = centroid;
  fit.rect.main_angle = main_angle;
  fit.rect.length = smax - smin + 1.0;
  fit.rect.width = std::max(tmax - tmin + 1.0, 1.0);
  fit.rect.density = std::min(
      1.0, double(region.pixels.size()) / (fit.rect.length * fit.rect.width));
  fit.segment.theta = main_angle;
  fit.segment.length = fit.rect.length;
  fit.segment.mid = centroid + 0.5 * (smax + smin) * axis +
                    0.5 * (tmax + tmin) * perp;
  return fit;
}

std::vector<LineSegment2D> full_scan_extract(LevelLineField& field,
                                             const ExtractionConfig& cfg) {
  std::vector<uint32_t> order;
  for (uint32_t i = 0; i < field.defined.size(); ++i) {
    if (field.defined[i] && !field.used[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return field.magnitude[a] > field.magnitude[b];
  });

  std::vector<LineSegment2D> out;
  for (uint32_t idx : order) {
    if (field.used[idx]) continue;
    const Eigen::Vector2i seed(int(idx % field.width), int(idx / field.width));
    LineSupportRegion region;
    try {
      region = grow_region(field, seed, cfg.angle_tolerance);
    } catch (const SeedInvalid&) {
      continue;
    }
    if (int(region.pixels.size()) < cfg.min_region_pixels) continue;
    const RegionFit fit =
        rectangle_from_region(region, field, cfg.min_region_pixels);
    if (fit.rect.length < cfg.min_length) continue;
    if (fit.rect.length / fit.rect.width < cfg.aspect_min) continue;
    if (fit.rect.density < cfg.density_min) continue;
    out.push_back(fit.segment);
  }
  return out;
}

GuidedResult guided_extract(LevelLineField& field,
                            const LineSegment2D& predicted, double prior_width,
                            const ExtractionConfig& cfg) {
  RectFrame rect;
  rect.center = predicted.mid;
  rect.u = predicted.direction();
  rect.n = Vec2(-rect.u.y(), rect.u.x());
  rect.half_len = predicted.length / 2 + cfg.rect_length_margin;
  rect.half_wid =
      std::clamp(prior_width, cfg.rect_min_width, cfg.rect_max_width) / 2;

  struct Candidate {
    LineSegment2D segment;
    std::vector<Eigen::Vector2i> pixels;
  };
  std::vector<Candidate> candidates;
  std::vector<uint8_t> local_used(field.defined.size(), 0);

  const int g = cfg.seed_grid;
  for (int row = 0; row < g; ++row) {
    for (int col = 0; col < g; ++col) {
      const double su = -rect.half_len + (col + 0.5) * 2 * rect.half_len / g;
      const double sv = -rect.half_wid + (row + 0.5) * 2 * rect.half_wid / g;
      const Vec2 pos = rect.center + su * rect.u + sv * rect.n;
      const Eigen::Vector2i seed(int(std::lround(pos.x())),
                                 int(std::lround(pos.y())));
      if (!field.inside(seed.x(), seed.y())) continue;
      if (!rect.contains(Vec2(seed.x(), seed.y()))) continue;
      LineSupportRegion region;
      try {
        region = grow_region_impl(field, seed, cfg.angle_tolerance, &rect,
                                  &local_used);
      } catch (const SeedInvalid&) {
        continue;
      }
      if (int(region.pixels.size()) < cfg.min_region_pixels) continue;
      const RegionFit fit =
          rectangle_from_region(region, field, cfg.min_region_pixels);
      if (fit.rect.length < cfg.guided_min_length) continue;
      if (fit.rect.length / fit.rect.width < cfg.aspect_min) continue;
      if (fit.rect.density < cfg.density_min) continue;
      candidates.push_back({fit.segment, std::move(region.pixels)});
    }
  }

  GuidedResult result;
  if (candidates.empty()) return result;

  int best = -1;
  double best_angle = cfg.collin2d;
  double best_dist = 1e300;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double da =
        axial_distance(candidates[i].segment.theta, predicted.theta);
    if (da > cfg.collin2d) continue;
    const double dm =
        point_to_segment_line_distance(candidates[i].segment.mid, predicted);
    if (da < best_angle - 1e-12 ||
        (std::abs(da - best_angle) <= 1e-12 && dm < best_dist)) {
      best = int(i);
      best_angle = da;
      best_dist = dm;
    }
  }
  if (best < 0) return result;

  LineSegment2D fused = candidates[best].segment;
  result.consumed = candidates[best].pixels;
  const double max_gap =
      std::max(cfg.fuse_gap_abs, cfg.fuse_gap_rel * predicted.length);
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (int(i) == best) continue;
    const Candidate& c = candidates[i];
    if (axial_distance(c.segment.theta, fused.theta) > cfg.collin2d) continue;
    if (point_to_segment_line_distance(c.segment.mid, fused) >
        cfg.collin_perp_dist) {
      continue;
    }
    // Interval gap along the fused axis; overlapping or abutting fragments
    // bridge occlusions.
    const Vec2 d = fused.direction();
    const double a0 = (c.segment.start() - fused.mid).dot(d);
    const double a1 = (c.segment.end() - fused.mid).dot(d);
    const double lo = std::min(a0, a1), hi = std::max(a0, a1);
    const double gap = std::max({lo - fused.length / 2, -fused.length / 2 - hi, 0.0});
    if (gap > max_gap) continue;
    fused = fuse_segments_span(fused, c.segment);
    result.consumed.insert(result.consumed.end(), c.pixels.begin(),
                           c.pixels.end());
  }

  // Orient toward the prediction before returning.
  if (angle_distance(fused.theta, predicted.theta) > M_PI / 2) {
    fused = fused.reversed();
  }
  for (const auto& p : result.consumed) {
    field.used[field.index(p.x(), p.y())] = 1;
  }
  result.segment = fused;
  return result;
}

namespace {

ImageF half_size(const ImageF& img) {
  ImageF out(std::max(1, img.width / 2), std::max(1, img.height / 2));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int sx = std::min(2 * x, img.width - 2);
      const int sy = std::min(2 * y, img.height - 2);
      out.at(x, y) = 0.25f * (img.at(sx, sy) + img.at(sx + 1, sy) +
                              img.at(sx, sy + 1) + img.at(sx + 1, sy + 1));
    }
  }
  return out;
}

}  // namespace

std::vector<TrackedSeed> klt_track_seeds(const ImageF& prev, const ImageF& cur,
                                         const std::vector<Vec2>& seeds,
                                         int levels, int radius) {
  if (prev.width != cur.width || prev.height != cur.height) {
    throw SizeMismatch("klt image sizes differ");
  }
  std::vector<ImageF> pyr_prev{prev}, pyr_cur{cur};
  for (int l = 1; l < levels; ++l) {
    pyr_prev.push_back(half_size(pyr_prev.back()));
    pyr_cur.push_back(half_size(pyr_cur.back()));
  }

  std::vector<TrackedSeed> out(seeds.size());
  for (size_t si = 0; si < seeds.size(); ++si) {
    Vec2 d = Vec2::Zero();  // displacement estimate
    bool ok = true;
    double final_rms = 0;
    for (int l = levels - 1; l >= 0 && ok; --l) {
      const ImageF& I0 = pyr_prev[l];
      const ImageF& I1 = pyr_cur[l];
      const double scale = std::pow(2.0, l);
      const Vec2 p0 = seeds[si] / scale;
      d /= scale;
      if (p0.x() < radius + 1 || p0.y() < radius + 1 ||
          p0.x() > I0.width - radius - 2 || p0.y() > I0.height - radius - 2) {
        d *= scale;
        continue;  // seed unusable at this level, try finer
      }
      // Template gradients and Hessian are fixed per level.
      Mat2 H = Mat2::Zero();
      std::vector<double> tpl, gxs, gys;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const double x = p0.x() + dx;
          const double y = p0.y() + dy;
          const double v = bilinear(I0, x, y);
          const double gx = 0.5 * (bilinear(I0, x + 1, y) - bilinear(I0, x - 1, y));
          const double gy = 0.5 * (bilinear(I0, x, y + 1) - bilinear(I0, x, y - 1));
          tpl.push_back(v);
          gxs.push_back(gx);
          gys.push_back(gy);
          H(0, 0) += gx * gx;
          H(0, 1) += gx * gy;
          H(1, 0) += gx * gy;
          H(1, 1) += gy * gy;
        }
      }
      const Eigen::SelfAdjointEigenSolver<Mat2> eig(H);
      if (eig.eigenvalues().minCoeff() < 1e-3 * tpl.size()) {
        ok = false;  // textureless patch
        break;
      }
      const Mat2 Hinv = H.inverse();
      for (int it = 0; it < 25; ++it) {
        const Vec2 p1 = p0 + d;
        if (p1.x() < radius + 1 || p1.y() < radius + 1 ||
            p1.x() > I1.width - radius - 2 ||
            p1.y() > I1.height - radius - 2) {
          ok = false;
          break;
        }
        Vec2 b = Vec2::Zero();
        double ssd = 0;
        int k = 0;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx, ++k) {
            const double r =
                bilinear(I1, p1.x() + dx, p1.y() + dy) - tpl[k];
            b += r * Vec2(gxs[k], gys[k]);
            ssd += r * r;
          }
        }
        final_rms = std::sqrt(ssd / tpl.size());
        const Vec2 step = Hinv * b;
        d -= step;  // inverse-compositional translation update
        if (step.norm() < 0.01) break;
      }
      d *= scale;
    }
    const Vec2 target = seeds[si] + d;
    if (ok && final_rms < 20.0 && target.x() >= 0 && target.y() >= 0 &&
        target.x() <= cur.width - 1 && target.y() <= cur.height - 1) {
      out[si] = {target, true};
    } else {
      out[si] = {seeds[si], false};
    }
  }
  return out;
}

}  // namespace lf
