#include <doctest.h>

#include "lf/line_flow.hpp"

using namespace lf;

namespace {

LineFlow make_flow(int id, long first_frame,
                   const std::vector<LineSegment2D>& segments) {
  LineFlow flow;
  flow.id = id;
  flow.first_frame = first_frame;
  for (size_t i = 0; i < segments.size(); ++i) {
    flow.history.push_back(
        {first_frame + long(i), segments[i], ObsSource::observed});
  }
  return flow;
}

double deg(double d) { return d * M_PI / 180.0; }

}  // namespace

TEST_CASE("fit_motion_2d") {
  // Constant translation (+2, +1) px/frame.
  std::vector<LineSegment2D> segs;
  for (int i = 0; i < 5; ++i) {
    segs.push_back({0.4, 50.0, Vec2(100 + 2 * i, 200 + i)});
  }
  LineFlow flow = make_flow(0, 10, segs);
  const MotionModel2D m = fit_motion_2d(flow, 5);
  CHECK(std::abs(m.delta[0]) < 1e-12);
  CHECK(std::abs(m.delta[1]) < 1e-12);
  CHECK(m.delta[2] == doctest::Approx(2.0));
  CHECK(m.delta[3] == doctest::Approx(1.0));

  // Wrap handling: 359, 1, 3 degrees walks +2 degrees per frame.
  LineFlow wrap = make_flow(1, 0,
                            {{deg(359), 50, {0, 0}},
                             {deg(1), 50, {0, 0}},
                             {deg(3), 50, {0, 0}}});
  CHECK(fit_motion_2d(wrap, 5).delta[0] == doctest::Approx(deg(2)));

  // Noisy drift: the delta equals the mean of the 4 differences.
  std::vector<LineSegment2D> noisy;
  const double lengths[5] = {50, 51.5, 50.5, 52.5, 52};
  for (int i = 0; i < 5; ++i) noisy.push_back({0.1, lengths[i], {0, 0}});
  LineFlow drift = make_flow(2, 0, noisy);
  CHECK(fit_motion_2d(drift, 5).delta[1] ==
        doctest::Approx((52.0 - 50.0) / 4.0));

  LineFlow single = make_flow(3, 0, {{0.1, 50, {0, 0}}});
  CHECK_THROWS_AS(fit_motion_2d(single, 5), InsufficientHistory);
}

TEST_CASE("predict_2d") {
  FlowConfig cfg;
  LineFlow flow = make_flow(0, 0, {{0.1, 50, {100, 100}}});
  // Zero motion: prediction equals the last segment.
  flow.motion2d.fitted = true;
  LineSegment2D g = predict_2d(flow, cfg);
  CHECK(g.theta == doctest::Approx(0.1));
  CHECK(g.length == doctest::Approx(50));
  CHECK((g.mid - Vec2(100, 100)).norm() < 1e-12);

  flow.motion2d.delta = Vec4(0.01, 1.0, 2.0, -1.0);
  g = predict_2d(flow, cfg);
  CHECK(g.theta == doctest::Approx(0.11));
  CHECK(g.length == doctest::Approx(51));
  CHECK((g.mid - Vec2(102, 99)).norm() < 1e-12);

  // Degenerate length guard.
  flow.motion2d.delta = Vec4(0, -80.0, 0, 0);
  CHECK(predict_2d(flow, cfg).length == doctest::Approx(cfg.min_length));
}

TEST_CASE("predict_3d") {
  const CameraIntrinsics K{500, 500, 320, 240};
  Line3D L;
  L.start_point = Vec3(0.1, 0, 2);
  L.end_point = Vec3(-0.1, 0, 2);
  L.v = L.end_point - L.start_point;
  L.n = L.start_point.cross(L.end_point);
  const auto h = predict_3d(L, Pose::identity(), K, 640, 480);
  REQUIRE(h.has_value());
  CHECK((h->start() - Vec2(345, 240)).norm() < 1e-9);
  CHECK((h->end() - Vec2(295, 240)).norm() < 1e-9);
  CHECK(angle_distance(h->theta, M_PI) < 1e-12);
  CHECK(h->length == doctest::Approx(50));
  CHECK((h->mid - Vec2(320, 240)).norm() < 1e-12);

  // Endpoint behind the camera.
  Line3D behind = L;
  behind.start_point.z() = -1;
  CHECK(!predict_3d(behind, Pose::identity(), K, 640, 480).has_value());

  // Re-projection under the exact pose overlays the observation.
  const Pose T{so3_exp(Vec3(0.03, -0.05, 0.02)), Vec3(0.1, 0.05, 0.2)};
  const Line3D Lw = Line3D::through_points(T.inverse().apply(Vec3(0.4, 0.1, 2)),
                                           T.inverse().apply(Vec3(-0.2, -0.1, 2.5)));
  const auto obs = predict_3d(Lw, T, K, 640, 480);
  REQUIRE(obs.has_value());
  CHECK((obs->start() - K.project(Vec3(0.4, 0.1, 2))).norm() < 1e-9);
  CHECK((obs->end() - K.project(Vec3(-0.2, -0.1, 2.5))).norm() < 1e-9);
}

TEST_CASE("fuse_predictions") {
  const LineSegment2D g{0.10, 50, {100, 100}};
  const LineSegment2D h{0.20, 150, {104, 102}};
  const LineSegment2D fused = fuse_predictions(g, h);
  CHECK(fused.length == doctest::Approx(125));
  CHECK(fused.mid.x() == doctest::Approx(103));
  CHECK(fused.mid.y() == doctest::Approx(101.5));
  CHECK(fused.theta == doctest::Approx(0.175).epsilon(1e-3));

  // Equal lengths: plain midpoint average and circular mean.
  const LineSegment2D a{0.1, 50, {0, 0}};
  const LineSegment2D b{0.3, 50, {10, 10}};
  const LineSegment2D mid = fuse_predictions(a, b);
  CHECK(mid.theta == doctest::Approx(0.2).epsilon(1e-6));
  CHECK((mid.mid - Vec2(5, 5)).norm() < 1e-12);

  // Single input passes through.
  const LineSegment2D only = fuse_predictions(g, std::nullopt);
  CHECK(only.theta == g.theta);
  CHECK_THROWS_AS(fuse_predictions(std::nullopt, std::nullopt), BothAbsent);

  // Idempotence and weight monotonicity.
  const LineSegment2D same = fuse_predictions(a, a);
  CHECK(same.theta == doctest::Approx(a.theta));
  CHECK(same.length == doctest::Approx(a.length));
  LineSegment2D heavy = h;
  heavy.length = 50e3;
  const LineSegment2D dominated = fuse_predictions(g, heavy);
  CHECK(std::abs(dominated.theta - heavy.theta) < 1e-2);
  CHECK((dominated.mid - heavy.mid).norm() < 1e-2);
}

TEST_CASE("refine_length") {
  CHECK(refine_length(100, 100, 0.8) == doctest::Approx(100));
  CHECK(refine_length(300, 100, 0.8) == doctest::Approx(125));
  CHECK(refine_length(10, 100, 0.8) == doctest::Approx(80));
}

TEST_CASE("update_flow lifecycle and the reserving period") {
  FlowConfig cfg;  // alpha = 3
  LineFlow flow = make_flow(0, 0, {{0.1, 50, {100, 100}}, {0.1, 50, {102, 100}}});
  flow.motion2d = fit_motion_2d(flow, cfg.t_w);

  // Observation: active, reserve count reset.
  update_flow(flow, 2, LineSegment2D{0.1, 50, {104, 100}},
              predict_2d(flow, cfg), cfg);
  CHECK(flow.state == FlowState::active);
  CHECK(flow.reserve_count == 0);
  CHECK(flow.last().source == ObsSource::observed);

  // Three consecutive misses: still reserved; the fourth terminates.
  for (int miss = 1; miss <= 3; ++miss) {
    update_flow(flow, 2 + miss, std::nullopt, predict_2d(flow, cfg), cfg);
    CHECK(flow.state == FlowState::reserved);
    CHECK(flow.reserve_count == miss);
    CHECK(flow.last().source == ObsSource::predicted);
  }
  update_flow(flow, 6, std::nullopt, predict_2d(flow, cfg), cfg);
  CHECK(flow.state == FlowState::terminated);
  // Trailing predicted entries are dropped: history ends at the last
  // observed frame.
  CHECK(flow.last().source == ObsSource::observed);
  CHECK(flow.last_frame() == 2);

  // No resurrection.
  CHECK_THROWS_AS(update_flow(flow, 7, LineSegment2D{0.1, 50, {0, 0}},
                              LineSegment2D{0.1, 50, {0, 0}}, cfg),
                  FrameGap);

  // Frame gaps rejected.
  LineFlow fresh = make_flow(1, 0, {{0.1, 50, {0, 0}}});
  CHECK_THROWS_AS(update_flow(fresh, 5, std::nullopt,
                              LineSegment2D{0.1, 50, {0, 0}}, cfg),
                  FrameGap);
}

TEST_CASE("observed lengths stay in the refinement band") {
  FlowConfig cfg;
  LineFlow flow = make_flow(0, 0, {{0.0, 100, {0, 0}}});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(20.0, 400.0);
  for (long f = 1; f <= 60; ++f) {
    const double mean = mean_observed_length(flow, cfg.mean_length_window);
    const LineSegment2D obs{0.0, u(rng), {double(f), 0}};
    update_flow(flow, f, obs, obs, cfg);
    const double stored = flow.last().segment.length;
    CHECK(stored >= cfg.beta * mean - 1e-9);
    CHECK(stored <= mean / cfg.beta + 1e-9);
  }
}

TEST_CASE("merge_flows_2d") {
  FlowConfig cfg;
  // Two flows tracking halves of one segment, overlapping by 10 px.
  std::vector<LineSegment2D> left, right;
  for (int i = 0; i < 6; ++i) {
    left.push_back({0.0, 60, Vec2(100 + i, 200)});   // spans x ~ [70, 130]
    right.push_back({0.0, 60, Vec2(150 + i, 200)});  // spans x ~ [120, 180]
  }
  LineFlow a = make_flow(2, 10, left);
  LineFlow b = make_flow(7, 10, right);
  const auto merged = merge_flows_2d(a, b, cfg);
  REQUIRE(merged.has_value());
  CHECK(merged->id == 2);
  CHECK(merged->history.size() == a.history.size());
  // The merged current segment spans both halves.
  CHECK(merged->last().segment.length > 100);
  // Content commutativity.
  const auto swapped = merge_flows_2d(b, a, cfg);
  REQUIRE(swapped.has_value());
  CHECK(swapped->id == merged->id);
  for (size_t i = 0; i < merged->history.size(); ++i) {
    CHECK((merged->history[i].segment.mid - swapped->history[i].segment.mid)
              .norm() < 1e-12);
    CHECK(merged->history[i].segment.length ==
          doctest::Approx(swapped->history[i].segment.length));
  }

  // Perpendicular flows: bucket prefilter rejects.
  std::vector<LineSegment2D> vert;
  for (int i = 0; i < 6; ++i) vert.push_back({M_PI / 2, 60, Vec2(125, 200)});
  LineFlow c = make_flow(9, 10, vert);
  CHECK(!merge_flows_2d(a, c, cfg).has_value());

  // Collinear but 50 px apart end to end: overlap gate rejects.
  std::vector<LineSegment2D> far;
  for (int i = 0; i < 6; ++i) far.push_back({0.0, 60, Vec2(240 + i, 200)});
  LineFlow d = make_flow(11, 10, far);
  CHECK(!merge_flows_2d(a, d, cfg).has_value());

  // Parallel but offset flows: perpendicular-distance gate rejects.
  std::vector<LineSegment2D> offset;
  for (int i = 0; i < 6; ++i) offset.push_back({0.0, 60, Vec2(150 + i, 206)});
  LineFlow e = make_flow(13, 10, offset);
  CHECK(!merge_flows_2d(a, e, cfg).has_value());
}
