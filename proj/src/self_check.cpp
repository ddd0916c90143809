#include "lf/self_check.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace lf {

namespace {

struct Rand {
  std::mt19937_64 rng;
  explicit Rand(uint64_t seed) : rng(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  Vec3 vec3(double s) {
    return {uniform(-s, s), uniform(-s, s), uniform(-s, s)};
  }
  Pose pose(double rot = 1.0, double trans = 1.0) {
    return {so3_exp(vec3(rot)), vec3(trans)};
  }
};

const CameraIntrinsics kTestK{420, 390, 315, 245};

// A world line whose projection into T is non-degenerate and whose stored
// endpoints sit in front of the camera.
Line3D visible_line(Rand& rnd, const Pose& T) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Pose inv = T.inverse();
    const Vec3 a = inv.apply(rnd.vec3(1.5) + Vec3(0, 0, 3.0));
    const Vec3 b = inv.apply(rnd.vec3(1.5) + Vec3(0, 0, 3.0));
    if ((a - b).norm() < 0.3) continue;
    const Line3D L = Line3D::through_points(a, b);
    const Line3D cam = transform_line(L, T);
    if ((kTestK.line_matrix() * cam.n).head<2>().norm() < 1e-3) continue;
    return L;
  }
  throw Error("failed to sample a visible line");
}

// Observed endpoints a few pixels off the projected line.
std::pair<Vec2, Vec2> line_observation(Rand& rnd, const Line3D& L,
                                       const Pose& T) {
  const Vec2 p1 = kTestK.project(T.apply(L.start_point));
  const Vec2 p2 = kTestK.project(T.apply(L.end_point));
  return {p1 + Vec2(rnd.uniform(-2, 2), rnd.uniform(-2, 2)),
          p2 + Vec2(rnd.uniform(-2, 2), rnd.uniform(-2, 2))};
}

struct ParamRef {
  enum Kind { pose_a, pose_b, pose_c, sim, point, line } kind;
};

void perturb(Problem& problem, const ResidualBlock& block, ParamRef::Kind kind,
             int axis, double h) {
  switch (kind) {
    case ParamRef::pose_a:
    case ParamRef::pose_b:
    case ParamRef::pose_c: {
      const int id = kind == ParamRef::pose_a   ? block.pose_a
                     : kind == ParamRef::pose_b ? block.pose_b
                                                : block.pose_c;
      Vec6 d = Vec6::Zero();
      d[axis] = h;
      problem.mutable_pose(id) = pose_retract(problem.pose(id), d);
      break;
    }
    case ParamRef::sim: {
      SimTransform& S = problem.mutable_sim(block.sim);
      if (axis < 3) {
        Vec3 d = Vec3::Zero();
        d[axis] = h;
        S.R = so3_exp(d) * S.R;
      } else if (axis < 6) {
        S.t[axis - 3] += h;
      } else {
        S.s *= std::exp(h);
      }
      break;
    }
    case ParamRef::point:
      problem.mutable_point(block.point)[axis] += h;
      break;
    case ParamRef::line: {
      Vec4 d = Vec4::Zero();
      d[axis] = h;
      problem.mutable_line(block.line) =
          orthonormal_retract(problem.line(block.line), d);
      break;
    }
  }
}

double compare_block_jacobians(const Problem& problem,
                               const ResidualBlock& block) {
  const double h = 1e-6;
  const BlockEval analytic = problem.evaluate_block(block, true);
  double worst = 0;

  std::vector<std::pair<ParamRef::Kind, const MatX*>> params;
  if (block.pose_a >= 0)
    params.push_back({ParamRef::pose_a, &analytic.J_pose_a});
  if (block.pose_b >= 0)
    params.push_back({ParamRef::pose_b, &analytic.J_pose_b});
  if (block.pose_c >= 0)
    params.push_back({ParamRef::pose_c, &analytic.J_pose_c});
  if (block.sim >= 0) params.push_back({ParamRef::sim, &analytic.J_sim});
  if (block.point >= 0) params.push_back({ParamRef::point, &analytic.J_point});
  if (block.line >= 0) params.push_back({ParamRef::line, &analytic.J_line});

  for (auto& [kind, J_analytic] : params) {
    const int dim = int(J_analytic->cols());
    MatX J_fd(J_analytic->rows(), dim);
    for (int axis = 0; axis < dim; ++axis) {
      Problem plus = problem;
      perturb(plus, block, kind, axis, h);
      Problem minus = problem;
      perturb(minus, block, kind, axis, -h);
      const VecX rp = plus.evaluate_block(block, false).residual;
      const VecX rm = minus.evaluate_block(block, false).residual;
      J_fd.col(axis) = (rp - rm) / (2 * h);
    }
    const double denom = std::max(1.0, J_fd.cwiseAbs().maxCoeff());
    worst =
        std::max(worst, (*J_analytic - J_fd).cwiseAbs().maxCoeff() / denom);
  }
  return worst;
}

}  // namespace

double jacobian_max_rel_error(ResidualKind kind, int trials, uint64_t seed) {
  Rand rnd(seed ^ (uint64_t(kind) * 0x9e3779b97f4a7c15ull));
  double worst = 0;
  for (int i = 0; i < trials; ++i) {
    Problem problem(kTestK);
    ResidualBlock block;
    block.kind = kind;
    switch (kind) {
      case ResidualKind::point: {
        const Pose T = rnd.pose();
        const Vec3 P = T.inverse().apply(rnd.vec3(1.5) + Vec3(0, 0, 3.0));
        block.pose_a = problem.add_pose(T);
        block.point = problem.add_point(P);
        block.obs_point = kTestK.project(T.apply(P)) +
                          Vec2(rnd.uniform(-2, 2), rnd.uniform(-2, 2));
        break;
      }
      case ResidualKind::line: {
        const Pose T = rnd.pose();
        const Line3D L = visible_line(rnd, T);
        block.pose_a = problem.add_pose(T);
        block.line = problem.add_line(L);
        std::tie(block.obs_e1, block.obs_e2) = line_observation(rnd, L, T);
        break;
      }
      case ResidualKind::smoothness: {
        block.pose_a = problem.add_pose(rnd.pose(0.8, 1.0));
        block.pose_b = problem.add_pose(rnd.pose(0.8, 1.0));
        block.pose_c = problem.add_pose(rnd.pose(0.8, 1.0));
        break;
      }
      case ResidualKind::pose_pose: {
        block.pose_a = problem.add_pose(rnd.pose(0.8, 1.0));
        block.pose_b = problem.add_pose(rnd.pose(0.8, 1.0));
        block.obs_rel = rnd.pose(0.8, 1.0);
        break;
      }
      case ResidualKind::sim3_point: {
        SimTransform S;
        S.s = rnd.uniform(0.5, 2.0);
        S.R = so3_exp(rnd.vec3(1.0));
        S.t = rnd.vec3(1.0);
        const Vec3 P =
            S.R.transpose() * (rnd.vec3(1.5) + Vec3(0, 0, 3.0) - S.t);
        block.sim = problem.add_sim(S);
        block.point = problem.add_point(P);
        block.obs_point = kTestK.project(S.R * P + S.t) +
                          Vec2(rnd.uniform(-2, 2), rnd.uniform(-2, 2));
        break;
      }
      case ResidualKind::sim3_line: {
        SimTransform S;
        S.s = rnd.uniform(0.5, 2.0);
        S.R = so3_exp(rnd.vec3(1.0));
        S.t = rnd.vec3(1.0);
        const Pose T = S.pose();
        const Line3D L = visible_line(rnd, T);
        block.sim = problem.add_sim(S);
        block.line = problem.add_line(L);
        std::tie(block.obs_e1, block.obs_e2) = line_observation(rnd, L, T);
        break;
      }
    }
    worst = std::max(worst, compare_block_jacobians(problem, block));
  }
  return worst;
}

double orthonormal_roundtrip_max_error(int trials, uint64_t seed) {
  Rand rnd(seed);
  double worst = 0;
  for (int i = 0; i < trials; ++i) {
    const Vec3 a = rnd.vec3(3.0);
    const Vec3 b = rnd.vec3(3.0);
    if ((a - b).norm() < 0.05 || a.cross(b).norm() < 1e-6) {
      --i;
      continue;
    }
    const Line3D L = Line3D::through_points(a, b);
    auto [n, v] = orthonormal_to_plucker(plucker_to_orthonormal(L));
    auto angle = [](const Vec3& x, const Vec3& y) {
      const Vec3 xn = x.normalized();
      const Vec3 yn = y.normalized();
      return std::atan2(xn.cross(yn).norm(), xn.dot(yn));
    };
    worst = std::max({worst, angle(n, L.n), angle(v, L.v)});
    const double ratio_in = L.n.norm() / L.v.norm();
    const double ratio_out = n.norm() / v.norm();
    worst = std::max(worst,
                     std::abs(ratio_out - ratio_in) / std::max(1.0, ratio_in));
  }
  return worst;
}

CheckResult check_jacobians(int trials_per_kind, uint64_t seed) {
  CheckResult result{"jacobians_vs_finite_differences", true, 0.0, ""};
  std::ostringstream detail;
  const char* names[] = {"point",     "line",       "smoothness",
                         "pose_pose", "sim3_point", "sim3_line"};
  for (ResidualKind kind :
       {ResidualKind::point, ResidualKind::line, ResidualKind::smoothness,
        ResidualKind::pose_pose, ResidualKind::sim3_point,
        ResidualKind::sim3_line}) {
    const double err = jacobian_max_rel_error(kind, trials_per_kind, seed);
    result.metric = std::max(result.metric, err);
    detail << names[int(kind)] << "=" << err << " ";
  }
  result.pass = result.metric < 1e-5;
  result.detail = detail.str();
  return result;
}

CheckResult check_orthonormal_roundtrip(int trials, uint64_t seed) {
  CheckResult result{"orthonormal_roundtrip", true, 0.0, ""};
  result.metric = orthonormal_roundtrip_max_error(trials, seed);
  result.pass = result.metric < 1e-9;
  return result;
}

CheckResult check_se3_roundtrip(int trials, uint64_t seed) {
  Rand rnd(seed);
  CheckResult result{"se3_exp_log_roundtrip", true, 0.0, ""};
  for (int i = 0; i < trials; ++i) {
    const Pose T = rnd.pose(M_PI, 5.0);
    const Pose back = se3_exp(se3_log(T));
    result.metric =
        std::max(result.metric, (back.R - T.R).norm() + (back.t - T.t).norm());
  }
  result.pass = result.metric < 1e-9;
  return result;
}

CheckResult check_lm_convergence(uint64_t seed) {
  Rand rnd(seed);
  CheckResult result{"lm_synthetic_convergence", false, 0.0, ""};
  Problem problem(kTestK);
  // Small two-view point problem with a perturbed second pose.
  const Pose T0 = Pose::identity();
  const Pose T1{so3_exp(Vec3(0.02, -0.01, 0.03)), Vec3(0.3, 0.05, 0.02)};
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.push_back(rnd.vec3(1.0) + Vec3(0, 0, 4.0));
  Vec6 noise;
  noise << 0.01, -0.02, 0.015, 0.03, -0.02, 0.01;
  const int p0 = problem.add_pose(T0, true);
  const int p1 = problem.add_pose(pose_retract(T1, noise));
  for (const Vec3& P : pts) {
    const int pid = problem.add_point(P, true);
    for (int view : {p0, p1}) {
      ResidualBlock b;
      b.kind = ResidualKind::point;
      b.pose_a = view;
      b.point = pid;
      b.obs_point = kTestK.project((view == p0 ? T0 : T1).apply(P));
      problem.add_block(b);
    }
  }
  const SolverReport report = problem.solve();
  result.metric = report.final_cost;
  result.pass =
      report.final_cost < 1e-16 && (problem.pose(p1).t - T1.t).norm() < 1e-8;
  result.detail = report.reason;
  return result;
}

std::vector<CheckResult> run_self_checks(uint64_t seed) {
  return {check_jacobians(100, seed), check_orthonormal_roundtrip(1000, seed),
          check_se3_roundtrip(1000, seed), check_lm_convergence(seed)};
}

}  // namespace lf
