#include <doctest.h>

#include <random>

#include "lf/geometry.hpp"

using namespace lf;

namespace {

std::mt19937_64 rng(42);

double uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 random_vec3(double scale = 1.0) {
  return {uniform(-scale, scale), uniform(-scale, scale),
          uniform(-scale, scale)};
}

Pose random_pose(double rot = 1.0, double trans = 1.0) {
  Pose T;
  T.R = so3_exp(random_vec3(rot));
  T.t = random_vec3(trans);
  return T;
}

Line3D random_line() {
  Vec3 a = random_vec3(2.0);
  Vec3 b = random_vec3(2.0);
  while ((b - a).norm() < 0.1) b = random_vec3(2.0);
  return Line3D::through_points(a, b);
}

double vec_angle(const Vec3& a, const Vec3& b) {
  const Vec3 an = a.normalized();
  const Vec3 bn = b.normalized();
  return std::atan2(an.cross(bn).norm(), an.dot(bn));
}

}  // namespace

TEST_CASE("endpoints_from_params axis-aligned cases") {
  {
    auto [es, et] = endpoints_from_params({0.0, 2.0, {0, 0}});
    CHECK(es.isApprox(Vec2(-1, 0), 1e-12));
    CHECK(et.isApprox(Vec2(1, 0), 1e-12));
  }
  {
    auto [es, et] = endpoints_from_params({M_PI / 2, 4.0, {5, 5}});
    CHECK((es - Vec2(5, 3)).norm() < 1e-12);
    CHECK((et - Vec2(5, 7)).norm() < 1e-12);
  }
  {
    auto [es, et] =
        endpoints_from_params({M_PI / 4, 2.0 * std::sqrt(2.0), {0, 0}});
    CHECK((es - Vec2(-1, -1)).norm() < 1e-12);
    CHECK((et - Vec2(1, 1)).norm() < 1e-12);
  }
}

TEST_CASE("params/endpoints round trip") {
  for (int i = 0; i < 200; ++i) {
    LineSegment2D seg{wrap_angle_2pi(uniform(0, 2 * M_PI)), uniform(1, 100),
                      {uniform(-50, 50), uniform(-50, 50)}};
    auto [es, et] = endpoints_from_params(seg);
    const LineSegment2D back = params_from_endpoints(es, et);
    CHECK(angle_distance(back.theta, seg.theta) < 1e-9);
    CHECK(back.length == doctest::Approx(seg.length).epsilon(1e-9));
    CHECK((back.mid - seg.mid).norm() < 1e-9);
    // Midpoint and length postconditions.
    CHECK((0.5 * (es + et) - seg.mid).norm() < 1e-9);
    CHECK((et - es).norm() == doctest::Approx(seg.length));
  }
}

TEST_CASE("project_line: canonical axis line") {
  // Line through (0,0,1) with direction x: n = (0,0,1) x offset... use points.
  const Line3D L = Line3D::through_points({-1, 0, 1}, {1, 0, 1});
  const CameraIntrinsics K{1, 1, 0, 0};
  const Vec3 l = project_line(L, Pose::identity(), K);
  // Projected line is the image x-axis (0, 1, 0) up to scale.
  const Vec3 expect(0, 1, 0);
  CHECK(l.normalized().cross(expect).norm() < 1e-12);
}

TEST_CASE("project_line agrees with point projection oracle") {
  const CameraIntrinsics K{400, 300, 320, 240};
  for (int i = 0; i < 200; ++i) {
    Pose T = random_pose();
    Line3D L = random_line();
    const Line3D cam = transform_line(L, T);
    // Keep the segment in front of the camera for the oracle.
    if (cam.start_point.z() < 0.2 || cam.end_point.z() < 0.2) continue;
    Vec3 l;
    try {
      l = project_line(L, T, K);
    } catch (const DegenerateProjection&) {
      continue;
    }
    l /= l.head<2>().norm();
    // Oracle: project the stored endpoints with K_p and test incidence.
    for (const Vec3& X : {L.start_point, L.end_point}) {
      const Vec2 px = K.project(T.apply(X));
      const double dist = l.dot(Vec3(px.x(), px.y(), 1.0));
      CHECK(std::abs(dist) < 1e-9);
    }
    // Homogeneous scale symmetry under Plucker negation.
    Line3D Lneg = L;
    Lneg.n = -L.n;
    Lneg.v = -L.v;
    Vec3 l2 = project_line(Lneg, T, K);
    CHECK(l.cross(l2.normalized()).norm() < 1e-9);
  }
}

TEST_CASE("line intrinsic matrix matches the cross-product identity") {
  const CameraIntrinsics K{420, 385, 310, 255};  // fx != fy on purpose
  const Mat3 Kp = K.point_matrix();
  const Mat3 Kl = K.line_matrix();
  for (int i = 0; i < 100; ++i) {
    const Vec3 X1 = random_vec3(2.0) + Vec3(0, 0, 4);
    const Vec3 X2 = random_vec3(2.0) + Vec3(0, 0, 4);
    if ((X1 - X2).norm() < 0.1) continue;
    const Vec3 l_pts = (Kp * X1).cross(Kp * X2);
    const Vec3 n = X1.cross(X2);  // camera-frame moment
    const Vec3 l_line = Kl * n;
    CHECK(l_pts.normalized().cross(l_line.normalized()).norm() < 1e-9);
  }
}

TEST_CASE("plucker/orthonormal unit symmetric case") {
  Line3D L;
  L.n = Vec3(0, 0, 1);
  L.v = Vec3(1, 0, 0);
  const OrthonormalLine o = plucker_to_orthonormal(L);
  CHECK((o.U.col(0) - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK((o.U.col(1) - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK((o.U.col(2) - Vec3(0, 1, 0)).norm() < 1e-12);
  CHECK(o.sigma1 == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(o.sigma2 == doctest::Approx(1 / std::sqrt(2.0)));
}

TEST_CASE("orthonormal round trip on random lines") {
  for (int i = 0; i < 1000; ++i) {
    const Line3D L = random_line();
    const OrthonormalLine o = plucker_to_orthonormal(L);
    CHECK((o.U.transpose() * o.U - Mat3::Identity()).norm() < 1e-12);
    CHECK(o.sigma1 * o.sigma1 + o.sigma2 * o.sigma2 ==
          doctest::Approx(1.0).epsilon(1e-12));
    auto [n, v] = orthonormal_to_plucker(o);
    CHECK(vec_angle(n, L.n) < 1e-9);
    CHECK(vec_angle(v, L.v) < 1e-9);
    const double ratio = L.n.norm() / L.v.norm();
    CHECK(n.norm() / v.norm() == doctest::Approx(ratio).epsilon(1e-9));
  }
}

TEST_CASE("orthonormal form is scale invariant") {
  const Line3D L = random_line();
  Line3D L5 = L;
  L5.n *= 5.0;
  L5.v *= 5.0;
  const OrthonormalLine a = plucker_to_orthonormal(L);
  const OrthonormalLine b = plucker_to_orthonormal(L5);
  CHECK((a.U - b.U).norm() < 1e-12);
  CHECK(a.sigma1 == doctest::Approx(b.sigma1).epsilon(1e-12));
  CHECK(a.sigma2 == doctest::Approx(b.sigma2).epsilon(1e-12));
}

TEST_CASE("orthonormal handles a line through the origin") {
  Line3D L = Line3D::through_points({0, 0, 0}, {0, 0, 2});
  CHECK(L.n.norm() < 1e-15);
  const OrthonormalLine o = plucker_to_orthonormal(L);
  CHECK(o.sigma1 == doctest::Approx(0.0));
  CHECK(o.sigma2 == doctest::Approx(1.0));
  // First column completed with the smallest-index basis vector rule.
  CHECK((o.U.col(0) - Vec3(1, 0, 0)).norm() < 1e-12);
  auto [n, v] = orthonormal_to_plucker(o);
  CHECK(n.norm() < 1e-12);
  CHECK(vec_angle(v, L.v) < 1e-9);
  CHECK_THROWS_AS(plucker_to_orthonormal(Vec3::Zero(), Vec3::Zero()),
                  DegenerateLine);
}

TEST_CASE("plane_from_segment passes through center and endpoint rays") {
  const CameraIntrinsics K{400, 300, 320, 240};
  {
    // Identity pose: camera center is the origin.
    const LineSegment2D seg{0.3, 40, {100, 120}};
    const Plane p = plane_from_segment(seg, Pose::identity(), K);
    CHECK(std::abs(p.d) / p.n.norm() < 1e-12);
  }
  {
    // Horizontal segment at v = y0: plane normal maps the image y-axis.
    const LineSegment2D seg{0.0, 60, {320, 240}};
    const Plane p = plane_from_segment(seg, Pose::identity(), K);
    // Rays through this row have zero y-component in camera coordinates.
    const Vec3 expected = Vec3(0, 1, 0);
    CHECK(p.n.normalized().cross(expected).norm() < 1e-12);
  }
  for (int i = 0; i < 200; ++i) {
    const Pose T = random_pose();
    const LineSegment2D seg{wrap_angle_2pi(uniform(0, 2 * M_PI)),
                            uniform(5, 100),
                            {uniform(0, 640), uniform(0, 480)}};
    const Plane p = plane_from_segment(seg, T, K);
    const double scale = p.n.norm();
    const Vec3 C = T.center();
    CHECK(std::abs(p.n.dot(C) + p.d) / scale < 1e-9);
    for (const Vec2& e : {seg.start(), seg.end()}) {
      // Back-projection ray of e: any point on it must lie on the plane.
      const Vec3 dir = T.R.transpose() * K.unproject(e);
      const Vec3 X = C + 3.7 * dir;
      CHECK(std::abs(p.n.dot(X) + p.d) / (scale * (1 + X.norm())) < 1e-9);
    }
  }
}

TEST_CASE("se3 exp/log basics") {
  CHECK(se3_log(Pose::identity()).norm() == 0.0);
  Pose T;
  T.t = Vec3(1, -2, 3);
  const Vec6 xi = se3_log(T);
  CHECK(xi.head<3>().norm() == 0.0);
  CHECK((xi.tail<3>() - T.t).norm() < 1e-12);
}

TEST_CASE("se3 exp/log round trip on 1000 random poses") {
  for (int i = 0; i < 1000; ++i) {
    const Pose T = random_pose(M_PI, 5.0);
    const Pose back = se3_exp(se3_log(T));
    CHECK((back.R - T.R).norm() < 1e-9);
    CHECK((back.t - T.t).norm() < 1e-9);
  }
}

TEST_CASE("se3 left jacobian inverse is consistent") {
  for (int i = 0; i < 50; ++i) {
    Vec6 xi;
    xi << random_vec3(1.5), random_vec3(2.0);
    const Mat6 J = se3_left_jacobian(xi);
    const Mat6 Jinv = se3_left_jacobian_inv(xi);
    CHECK((J * Jinv - Mat6::Identity()).norm() < 1e-10);
    // First-order model: log(exp(eta) exp(xi)) ~ xi + Jl^{-1}(xi) eta.
    Vec6 eta;
    eta << random_vec3(1e-6), random_vec3(1e-6);
    const Vec6 lhs = se3_log(Pose(se3_exp(eta) * se3_exp(xi)));
    const Vec6 pred = xi + Jinv * eta;
    CHECK((lhs - pred).norm() < 1e-9);
  }
}

TEST_CASE("ray_line_closest_point recovers points on the line") {
  for (int i = 0; i < 100; ++i) {
    const Line3D L = random_line();
    const Vec3 X = L.start_point + uniform(-2, 2) * L.v;
    const Vec3 origin = random_vec3(3.0);
    if ((X - origin).norm() < 0.1) continue;
    const Vec3 dir = X - origin;
    if (dir.normalized().cross(L.v.normalized()).norm() < 1e-6) continue;
    const Vec3 got = ray_line_closest_point(origin, dir, L);
    CHECK((got - X).norm() < 1e-8);
  }
  // Parallel ray throws.
  const Line3D L = Line3D::through_points({0, 0, 1}, {1, 0, 1});
  CHECK_THROWS_AS(ray_line_closest_point(Vec3(0, 1, 0), Vec3(1, 0, 0), L),
                  RayParallel);
}

TEST_CASE("plucker constraint preserved by constructors and transforms") {
  for (int i = 0; i < 200; ++i) {
    const Line3D L = random_line();
    CHECK(std::abs(L.n.dot(L.v)) < 1e-9 * L.n.norm() * L.v.norm() + 1e-12);
    const Line3D Lc = transform_line(L, random_pose());
    CHECK(std::abs(Lc.n.dot(Lc.v)) < 1e-9 * (1 + Lc.n.norm() * Lc.v.norm()));
    // Transformed endpoints stay on the transformed line.
    CHECK((Lc.closest_point(Lc.start_point) - Lc.start_point).norm() < 1e-9);
  }
}
