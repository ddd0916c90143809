#include <doctest.h>

#include <random>

#include "lf/optimizer.hpp"
#include "lf/self_check.hpp"

using namespace lf;

namespace {

std::mt19937_64 rng(99);

double uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 rvec(double s) { return {uniform(-s, s), uniform(-s, s), uniform(-s, s)}; }

const CameraIntrinsics K{400, 380, 320, 240};

}  // namespace

TEST_CASE("point residual definition") {
  const Pose T{so3_exp(Vec3(0.1, -0.2, 0.05)), Vec3(0.3, 0.1, -0.2)};
  const Vec3 P(0.4, -0.2, 3.0);
  const Vec2 proj = K.project(T.apply(P));
  CHECK(point_residual(proj, P, T, K).norm() < 1e-14);
  const Vec2 r = point_residual(proj + Vec2(1, -2), P, T, K);
  CHECK((r - Vec2(1, -2)).norm() < 1e-12);
  // Behind-camera gate.
  CHECK_THROWS_AS(point_residual(proj, Vec3(0, 0, -5), Pose::identity(), K),
                  BehindCamera);
  // Random instances against independent pinhole arithmetic.
  for (int i = 0; i < 100; ++i) {
    const Pose Tr{so3_exp(rvec(1.0)), rvec(1.0)};
    const Vec3 Pw = Tr.inverse().apply(rvec(1.5) + Vec3(0, 0, 4));
    const Vec2 obs(uniform(0, 640), uniform(0, 480));
    const Vec3 q = Tr.R * Pw + Tr.t;
    const Vec2 expected =
        obs - Vec2(K.fx * q.x() / q.z() + K.x0, K.fy * q.y() / q.z() + K.y0);
    CHECK((point_residual(obs, Pw, Tr, K) - expected).norm() < 1e-12);
  }
}

TEST_CASE("line residual: signed normalized endpoint distances") {
  const Pose T{so3_exp(Vec3(0.05, 0.1, -0.02)), Vec3(0.1, -0.2, 0.1)};
  const Line3D L =
      Line3D::through_points(T.inverse().apply(Vec3(-0.5, 0.2, 2.5)),
                             T.inverse().apply(Vec3(0.6, -0.1, 3.1)));
  Vec3 l = project_line(L, T, K);
  l /= l.head<2>().norm();
  // Two points exactly on the projected line.
  const Vec2 d(-l.y(), l.x());
  const Vec2 p0 = Vec2(100, 200) - Vec3(100, 200, 1).dot(l) * l.head<2>();
  const Vec2 e1 = p0;
  const Vec2 e2 = p0 + 50 * d;
  CHECK(line_residual(e1, e2, L.n, L.v, T, K).norm() < 1e-9);
  // Perpendicular displacement of 3 px shows up as |eps| = 3.
  const Vec2 shifted = e1 + 3.0 * l.head<2>();
  const Vec2 r = line_residual(shifted, e2, L.n, L.v, T, K);
  CHECK(std::abs(std::abs(r[0]) - 3.0) < 1e-9);
  CHECK(std::abs(r[1]) < 1e-9);
  // Invariance to positive Plucker rescaling.
  const Vec2 r2 = line_residual(shifted, e2, 7.5 * L.n, 7.5 * L.v, T, K);
  CHECK((r - r2).norm() < 1e-12);
}

TEST_CASE("smoothness residual on constant-velocity triples") {
  CHECK(smoothness_residual(Pose::identity(), Pose::identity(),
                            Pose::identity())
            .norm() == 0.0);
  const Pose m{so3_exp(Vec3(0.02, 0.01, -0.03)), Vec3(0.1, 0.02, 0.05)};
  const Pose Ta{so3_exp(Vec3(0.3, -0.2, 0.1)), Vec3(1, 2, 3)};
  const Pose Tb = m * Ta;
  const Pose Tc = m * Tb;
  CHECK(smoothness_residual(Ta, Tb, Tc).norm() < 1e-12);
  // Small perturbation of T_t yields a residual of comparable norm.
  Vec6 delta;
  delta << 1e-3, -1e-3, 5e-4, 1e-3, 2e-3, -1e-3;
  const Pose Tc_perturbed = se3_exp(delta) * Tc;
  const double n = smoothness_residual(Ta, Tb, Tc_perturbed).norm();
  CHECK(n > 0.9 * delta.norm());
  CHECK(n < 1.1 * delta.norm());
}

TEST_CASE("pose_pose residual") {
  const Pose Ti{so3_exp(Vec3(0.2, 0.1, -0.3)), Vec3(0.5, -0.2, 1.0)};
  const Pose Tj{so3_exp(Vec3(-0.1, 0.4, 0.2)), Vec3(-0.3, 0.8, 0.1)};
  const Pose T_obs = Ti * Tj.inverse();
  CHECK(pose_pose_residual(T_obs, Ti, Tj).norm() < 1e-12);
  CHECK(pose_pose_residual(Pose::identity(), Ti, Ti).norm() < 1e-12);
  // First-order linearity in a perturbation of T_j.
  Vec6 delta;
  delta << 2e-4, -1e-4, 3e-4, -2e-4, 1e-4, 2e-4;
  const double n1 =
      pose_pose_residual(T_obs, Ti, pose_retract(Tj, delta)).norm();
  const double n2 =
      pose_pose_residual(T_obs, Ti, pose_retract(Tj, 2 * delta)).norm();
  CHECK(n1 > 0);
  CHECK(n2 == doctest::Approx(2 * n1).epsilon(1e-3));
}

TEST_CASE("sim3 residuals reduce to SE(3) at s = 1 and scale the line term") {
  const Pose T{so3_exp(Vec3(0.15, -0.1, 0.2)), Vec3(0.2, 0.3, -0.1)};
  SimTransform S{1.0, T.R, T.t};
  const Vec3 P = T.inverse().apply(Vec3(0.3, -0.2, 2.8));
  const Vec2 obs(333, 222);
  CHECK((sim3_point_residual(obs, P, S, K) - point_residual(obs, P, T, K))
            .norm() < 1e-14);

  const Line3D L =
      Line3D::through_points(T.inverse().apply(Vec3(-0.4, 0.1, 2.2)),
                             T.inverse().apply(Vec3(0.5, 0.4, 3.0)));
  const Vec2 e1(100, 100), e2(200, 180);
  CHECK((sim3_line_residual(e1, e2, L.n, L.v, S, K) -
         line_residual(e1, e2, L.n, L.v, T, K))
            .norm() < 1e-12);

  // s = 2 doubles the translation contribution: compare against the direct
  // formula evaluation.
  S.s = 2.0;
  const Vec3 l = K.line_matrix() * (S.R * L.n + 2.0 * S.t.cross(S.R * L.v));
  const Vec2 expected =
      Vec2(Vec3(e1.x(), e1.y(), 1).dot(l), Vec3(e2.x(), e2.y(), 1).dot(l)) /
      l.head<2>().norm();
  CHECK((sim3_line_residual(e1, e2, L.n, L.v, S, K) - expected).norm() < 1e-12);

  // Exact fit at any s when the data was generated with that s.
  for (double s : {0.5, 1.3, 2.7}) {
    SimTransform Sg{s, T.R, T.t};
    const Vec3 lg = K.line_matrix() * (Sg.R * L.n + s * Sg.t.cross(Sg.R * L.v));
    const Vec3 ln = lg / lg.head<2>().norm();
    const Vec2 dir(-ln.y(), ln.x());
    const Vec2 base = Vec2(150, 150) - Vec3(150, 150, 1).dot(ln) * ln.head<2>();
    const Vec2 g1 = base;
    const Vec2 g2 = base + 70 * dir;
    CHECK(sim3_line_residual(g1, g2, L.n, L.v, Sg, K).norm() < 1e-9);
  }
}

TEST_CASE("hand-evaluated point jacobian at the canonical configuration") {
  const CameraIntrinsics unitK{1, 1, 0, 0};
  Problem problem(unitK);
  ResidualBlock b;
  b.kind = ResidualKind::point;
  b.pose_a = problem.add_pose(Pose::identity());
  b.point = problem.add_point(Vec3(0, 0, 1));
  b.obs_point = Vec2(0, 0);
  const BlockEval ev = problem.evaluate_block(b, true);
  // J wrt the point is -[[1,0,0],[0,1,0]] at P=(0,0,1), identity pose.
  Mat<2, 3> expected;
  expected << -1, 0, 0, 0, -1, 0;
  CHECK((ev.J_point - expected).norm() < 1e-12);
}

TEST_CASE("analytic jacobians match central finite differences") {
  for (ResidualKind kind :
       {ResidualKind::point, ResidualKind::line, ResidualKind::smoothness,
        ResidualKind::pose_pose, ResidualKind::sim3_point,
        ResidualKind::sim3_line}) {
    const double err = jacobian_max_rel_error(kind, 25, 1234);
    CAPTURE(int(kind));
    CHECK(err < 1e-5);
  }
}

TEST_CASE("jacobian of a zero-residual configuration is still correct") {
  Problem problem(K);
  const Pose T{so3_exp(Vec3(0.1, 0.2, -0.1)), Vec3(0.2, -0.1, 0.3)};
  const Vec3 P = T.inverse().apply(Vec3(0.2, 0.1, 2.0));
  ResidualBlock b;
  b.kind = ResidualKind::point;
  b.pose_a = problem.add_pose(T);
  b.point = problem.add_point(P);
  b.obs_point = K.project(T.apply(P));
  const BlockEval ev = problem.evaluate_block(b, true);
  CHECK(ev.residual.norm() < 1e-12);
  CHECK(ev.J_point.norm() > 1.0);  // gradient of a perfect fit is nonzero
  // Compare one column against finite differences.
  const double h = 1e-6;
  Problem plus = problem;
  plus.mutable_point(b.point).x() += h;
  Problem minus = problem;
  minus.mutable_point(b.point).x() -= h;
  const VecX fd = (plus.evaluate_block(b, false).residual -
                   minus.evaluate_block(b, false).residual) /
                  (2 * h);
  CHECK((ev.J_point.col(0) - fd).norm() < 1e-6);
}

namespace {

// Forward-generated bundle adjustment scene: 10 poses, 50 points, 20 lines.
struct BaScene {
  std::vector<Pose> poses;
  std::vector<Vec3> points;
  std::vector<Line3D> lines;
};

BaScene make_ba_scene(int num_points = 50) {
  BaScene scene;
  for (int i = 0; i < 10; ++i) {
    Pose T;
    T.R = so3_exp(Vec3(0.01 * i, -0.02 * i, 0.005 * i));
    T.t = Vec3(0.1 * i, 0.02 * i, 0.01 * i);
    scene.poses.push_back(T);
  }
  for (int i = 0; i < num_points; ++i) {
    scene.points.push_back(rvec(1.5) + Vec3(0, 0, 5.0));
  }
  for (int i = 0; i < 20; ++i) {
    const Vec3 a = rvec(1.5) + Vec3(0, 0, 5.0);
    Vec3 b = rvec(1.5) + Vec3(0, 0, 5.0);
    while ((a - b).norm() < 0.5) b = rvec(1.5) + Vec3(0, 0, 5.0);
    scene.lines.push_back(Line3D::through_points(a, b));
  }
  return scene;
}

struct BaProblem {
  Problem problem;
  std::vector<int> pose_ids, point_ids, line_ids;
};

BaProblem build_ba(const BaScene& scene, double pose_noise, double lm_noise,
                   bool huber) {
  BaProblem ba{Problem(K), {}, {}, {}};
  std::mt19937_64 local(5);
  auto jitter = [&local](double s) {
    return std::uniform_real_distribution<double>(-s, s)(local);
  };
  for (size_t i = 0; i < scene.poses.size(); ++i) {
    Pose T = scene.poses[i];
    if (i >= 2 && pose_noise > 0) {
      Vec6 d;
      d << jitter(pose_noise), jitter(pose_noise), jitter(pose_noise),
          jitter(pose_noise), jitter(pose_noise), jitter(pose_noise);
      T = pose_retract(T, d);
    }
    ba.pose_ids.push_back(ba.problem.add_pose(T, i < 2));
  }
  for (const Vec3& P : scene.points) {
    Vec3 p = P;
    if (lm_noise > 0) {
      p += Vec3(jitter(lm_noise), jitter(lm_noise), jitter(lm_noise))
               .cwiseProduct(P.cwiseAbs());
    }
    ba.point_ids.push_back(ba.problem.add_point(p));
  }
  for (const Line3D& L : scene.lines) {
    Line3D l = L;
    if (lm_noise > 0) {
      l = Line3D::through_points(
          L.start_point +
              Vec3(jitter(lm_noise), jitter(lm_noise), jitter(lm_noise)),
          L.end_point +
              Vec3(jitter(lm_noise), jitter(lm_noise), jitter(lm_noise)));
    }
    ba.line_ids.push_back(ba.problem.add_line(l));
  }
  for (size_t i = 0; i < scene.poses.size(); ++i) {
    for (size_t j = 0; j < scene.points.size(); ++j) {
      ResidualBlock b;
      b.kind = ResidualKind::point;
      b.pose_a = ba.pose_ids[i];
      b.point = ba.point_ids[j];
      b.obs_point = K.project(scene.poses[i].apply(scene.points[j]));
      if (huber) b.huber_scale = 1.345;
      ba.problem.add_block(b);
    }
    for (size_t j = 0; j < scene.lines.size(); ++j) {
      ResidualBlock b;
      b.kind = ResidualKind::line;
      b.pose_a = ba.pose_ids[i];
      b.line = ba.line_ids[j];
      b.obs_e1 = K.project(scene.poses[i].apply(scene.lines[j].start_point));
      b.obs_e2 = K.project(scene.poses[i].apply(scene.lines[j].end_point));
      if (huber) b.huber_scale = 1.345;
      ba.problem.add_block(b);
    }
  }
  return ba;
}

}  // namespace

TEST_CASE("LM at the fixed point: zero noise, initialized at truth") {
  const BaScene scene = make_ba_scene();
  BaProblem ba = build_ba(scene, 0, 0, false);
  const SolverReport report = ba.problem.solve();
  CHECK(report.iterations <= 2);
  CHECK(report.final_cost < 1e-16);
  CHECK(report.final_cost <= report.initial_cost);
}

TEST_CASE("LM recovers a perturbed bundle adjustment problem") {
  const BaScene scene = make_ba_scene();
  BaProblem ba = build_ba(scene, 1e-2, 0.01, false);
  SolverOptions opts;
  opts.max_iterations = 100;
  const SolverReport report = ba.problem.solve(opts);
  CHECK(report.final_cost < 1e-12);
  for (size_t i = 0; i < scene.poses.size(); ++i) {
    CHECK((ba.problem.pose(ba.pose_ids[i]).t - scene.poses[i].t).norm() < 1e-6);
    CHECK((ba.problem.pose(ba.pose_ids[i]).R - scene.poses[i].R).norm() < 1e-6);
  }
  for (size_t j = 0; j < scene.points.size(); ++j) {
    CHECK((ba.problem.point(ba.point_ids[j]) - scene.points[j]).norm() < 1e-6);
  }
}

TEST_CASE("Huber keeps a gross line outlier from biasing the solution") {
  // Pose-only ablation with landmarks held at truth: the bounded Huber
  // influence of one saturated outlier must not move the inlier estimates.
  const BaScene scene = make_ba_scene(2000);
  auto build = [&](bool with_outlier) {
    Problem problem(K);
    std::vector<int> pose_ids;
    for (size_t i = 0; i < scene.poses.size(); ++i) {
      Pose T = scene.poses[i];
      if (i >= 2) {
        Vec6 d;
        d << 1e-3, -2e-3, 1e-3, 3e-3, -1e-3, 2e-3;
        T = pose_retract(T, d);
      }
      pose_ids.push_back(problem.add_pose(T, i < 2));
    }
    std::vector<int> point_ids, line_ids;
    for (const Vec3& P : scene.points) point_ids.push_back(problem.add_point(P, true));
    for (const Line3D& L : scene.lines) line_ids.push_back(problem.add_line(L, true));
    for (size_t i = 0; i < scene.poses.size(); ++i) {
      for (size_t j = 0; j < scene.points.size(); ++j) {
        ResidualBlock b;
        b.kind = ResidualKind::point;
        b.pose_a = pose_ids[i];
        b.point = point_ids[j];
        b.obs_point = K.project(scene.poses[i].apply(scene.points[j]));
        b.huber_scale = 1.345;
        problem.add_block(b);
      }
      for (size_t j = 0; j < scene.lines.size(); ++j) {
        ResidualBlock b;
        b.kind = ResidualKind::line;
        b.pose_a = pose_ids[i];
        b.line = line_ids[j];
        b.obs_e1 = K.project(scene.poses[i].apply(scene.lines[j].start_point));
        b.obs_e2 = K.project(scene.poses[i].apply(scene.lines[j].end_point));
        b.huber_scale = 1.345;
        problem.add_block(b);
      }
    }
    if (with_outlier) {
      ResidualBlock outlier;
      outlier.kind = ResidualKind::line;
      outlier.pose_a = pose_ids[4];
      outlier.line = line_ids[0];
      outlier.obs_e1 = Vec2(250, 300);  // ~100 px off the true line
      outlier.obs_e2 = Vec2(400, 150);
      outlier.huber_scale = 1.345;
      problem.add_block(outlier);
    }
    SolverOptions opts;
    opts.max_iterations = 100;
    problem.solve(opts);
    return problem;
  };

  const Problem clean = build(false);
  const Problem dirty = build(true);
  for (size_t i = 0; i < scene.poses.size(); ++i) {
    CHECK((clean.pose(i).t - dirty.pose(i).t).norm() < 1e-4);
    CHECK((clean.pose(i).R - dirty.pose(i).R).norm() < 1e-4);
  }
}

TEST_CASE("Huber loss shape") {
  const Pose T = Pose::identity();
  const Vec3 P(0, 0, 2);
  auto cost_at = [&](double offset_px, std::optional<double> huber) {
    Problem p(K);
    ResidualBlock b;
    b.kind = ResidualKind::point;
    b.pose_a = p.add_pose(T, true);
    b.point = p.add_point(P, true);
    b.obs_point = K.project(P) + Vec2(offset_px, 0);
    b.huber_scale = huber;
    p.add_block(b);
    return p.cost();
  };
  const double k = 1.345;
  // Quadratic below the scale.
  CHECK(cost_at(0.5, k) == doctest::Approx(cost_at(0.5, std::nullopt)));
  // Linear growth (bounded influence) above the scale.
  const double c10 = cost_at(10, k);
  const double c20 = cost_at(20, k);
  CHECK(c20 - c10 == doctest::Approx(2 * k * 10).epsilon(1e-6));
}

TEST_CASE("orthonormal retraction stays on the manifold") {
  OrthonormalLine o = plucker_to_orthonormal(
      Line3D::through_points(Vec3(1, 0, 2), Vec3(0, 1, 3)));
  std::mt19937_64 local(3);
  for (int i = 0; i < 200; ++i) {
    Vec4 d;
    for (int k = 0; k < 4; ++k) {
      d[k] = std::uniform_real_distribution<double>(-0.2, 0.2)(local);
    }
    o = orthonormal_retract(o, d);
    CHECK((o.U.transpose() * o.U - Mat3::Identity()).norm() < 1e-9);
    CHECK(std::abs(o.sigma1 * o.sigma1 + o.sigma2 * o.sigma2 - 1.0) < 1e-12);
  }
}

TEST_CASE("gauge: fixed first poses give a solvable full-rank system") {
  const BaScene scene = make_ba_scene();
  BaProblem ba = build_ba(scene, 5e-3, 0.005, false);
  SolverOptions opts;
  opts.max_iterations = 60;
  const SolverReport report = ba.problem.solve(opts);
  CHECK(report.final_cost < 1e-10);
  CHECK(report.converged);
}
