#include "lf/optimizer.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace lf {

namespace {

// d project(q) / d q for a camera point q.
Mat<2, 3> dehomog_jacobian(const Vec3& q, const CameraIntrinsics& K) {
  Mat<2, 3> J;
  const double iz = 1.0 / q.z();
  J << K.fx * iz, 0, -K.fx * q.x() * iz * iz, 0, K.fy * iz,
      -K.fy * q.y() * iz * iz;
  return J;
}

// d (normalized incidence residual) / d l at the homogeneous image line l.
Mat<2, 3> incidence_jacobian(const Vec2& e1, const Vec2& e2, const Vec3& l) {
  const double s2 = l.x() * l.x() + l.y() * l.y();
  const double s = std::sqrt(s2);
  Mat3 M;
  M << l.y() * l.y(), -l.x() * l.y(), 0, -l.x() * l.y(), l.x() * l.x(), 0,
      -l.x() * l.z(), -l.y() * l.z(), s2;
  Mat<2, 3> E;
  E << e1.x(), e1.y(), 1, e2.x(), e2.y(), 1;
  return E * M / (s2 * s);
}

Vec2 incidence_residual(const Vec2& e1, const Vec2& e2, const Vec3& l) {
  const double s = l.head<2>().norm();
  if (s < 1e-12) {
    throw DegenerateProjection("line projects through the optical center");
  }
  return Vec2(Vec3(e1.x(), e1.y(), 1.0).dot(l),
              Vec3(e2.x(), e2.y(), 1.0).dot(l)) /
         s;
}

// Camera-frame moment of a world line under (R, t) with the translation
// contribution scaled by s (s = 1 for rigid poses).
Vec3 transformed_moment(const Vec3& n, const Vec3& v, const Mat3& R,
                        const Vec3& t, double s) {
  return R * n + s * t.cross(R * v);
}

// Maps 4-DoF orthonormal tangent deltas to Plucker deltas (appendix form).
Mat<6, 4> orthonormal_tangent(const OrthonormalLine& o) {
  const Vec3 u1 = o.U.col(0);
  const Vec3 u2 = o.U.col(1);
  const Vec3 u3 = o.U.col(2);
  Mat<6, 4> B = Mat<6, 4>::Zero();
  B.block<3, 1>(0, 1) = -o.sigma1 * u3;
  B.block<3, 1>(0, 2) = o.sigma1 * u2;
  B.block<3, 1>(0, 3) = -o.sigma2 * u1;
  B.block<3, 1>(3, 0) = o.sigma2 * u3;
  B.block<3, 1>(3, 2) = -o.sigma2 * u1;
  B.block<3, 1>(3, 3) = o.sigma1 * u2;
  return B;
}

// Maps the decoupled pose tangent (phi, rho) to a left SE(3) twist.
Mat6 decoupled_to_twist(const Pose& T) {
  Mat6 S = Mat6::Identity();
  S.bottomLeftCorner<3, 3>() = skew(T.t);
  return S;
}

// [R | s [t]x R] applied to stacked Plucker coordinates, as a 3x6 map.
Mat<3, 6> line_transform_matrix(const Mat3& R, const Vec3& t, double s) {
  Mat<3, 6> M;
  M.leftCols<3>() = R;
  M.rightCols<3>() = s * skew(t) * R;
  return M;
}

}  // namespace

Vec2 point_residual(const Vec2& p, const Vec3& P, const Pose& T,
                    const CameraIntrinsics& K) {
  const Vec3 q = T.apply(P);
  if (q.z() <= 0) throw BehindCamera();
  return p - K.project(q);
}

Vec2 line_residual(const Vec2& e1, const Vec2& e2, const Vec3& n,
                   const Vec3& v, const Pose& T, const CameraIntrinsics& K) {
  const Vec3 l = K.line_matrix() * transformed_moment(n, v, T.R, T.t, 1.0);
  return incidence_residual(e1, e2, l);
}

Vec6 smoothness_residual(const Pose& T_a, const Pose& T_b, const Pose& T_c) {
  return se3_log(T_b * T_a.inverse() * T_b * T_c.inverse());
}

Vec6 pose_pose_residual(const Pose& T_obs, const Pose& T_i, const Pose& T_j) {
  return se3_log(T_obs * T_j * T_i.inverse());
}

Vec2 sim3_point_residual(const Vec2& p, const Vec3& P, const SimTransform& S,
                         const CameraIntrinsics& K) {
  // s scales the homogeneous vector uniformly and cancels in the projection.
  const Vec3 q = S.R * P + S.t;
  if (S.s * q.z() <= 0) throw BehindCamera();
  return p - K.project(q);
}

Vec2 sim3_line_residual(const Vec2& e1, const Vec2& e2, const Vec3& n,
                        const Vec3& v, const SimTransform& S,
                        const CameraIntrinsics& K) {
  const Vec3 l = K.line_matrix() * transformed_moment(n, v, S.R, S.t, S.s);
  return incidence_residual(e1, e2, l);
}

int Problem::add_pose(const Pose& T, bool constant) {
  poses_.push_back({T, constant, -1});
  return int(poses_.size()) - 1;
}

int Problem::add_sim(const SimTransform& S, bool constant) {
  sims_.push_back({S, constant, -1});
  return int(sims_.size()) - 1;
}

int Problem::add_point(const Vec3& P, bool constant) {
  points_.push_back({P, constant, -1});
  return int(points_.size()) - 1;
}

int Problem::add_line(const OrthonormalLine& L, bool constant) {
  lines_.push_back({L, constant, -1});
  return int(lines_.size()) - 1;
}

BlockEval Problem::evaluate_block(const ResidualBlock& block,
                                  bool want_jacobians) const {
  BlockEval ev;
  const Mat3 Kl = K_.line_matrix();
  switch (block.kind) {
    case ResidualKind::point: {
      const Pose& T = poses_[block.pose_a].value;
      const Vec3& P = points_[block.point].value;
      ev.residual = point_residual(block.obs_point, P, T, K_);
      if (want_jacobians) {
        const Vec3 q = T.apply(P);
        const Mat<2, 3> Jp = dehomog_jacobian(q, K_);
        ev.J_point = -Jp * T.R;
        MatX Jt(2, 6);
        Jt.leftCols<3>() = Jp * skew(T.R * P);
        Jt.rightCols<3>() = -Jp;
        ev.J_pose_a = Jt;
      }
      break;
    }
    case ResidualKind::line: {
      const Pose& T = poses_[block.pose_a].value;
      const OrthonormalLine& o = lines_[block.line].value;
      auto [n, v] = orthonormal_to_plucker(o);
      const Vec3 nc = transformed_moment(n, v, T.R, T.t, 1.0);
      const Vec3 l = Kl * nc;
      ev.residual = incidence_residual(block.obs_e1, block.obs_e2, l);
      if (want_jacobians) {
        const Mat<2, 3> D = incidence_jacobian(block.obs_e1, block.obs_e2, l);
        const Mat<2, 3> DK = D * Kl;
        ev.J_line =
            DK * line_transform_matrix(T.R, T.t, 1.0) * orthonormal_tangent(o);
        MatX Jt(2, 6);
        Jt.leftCols<3>() = DK * (-skew(T.R * n) - skew(T.t) * skew(T.R * v));
        Jt.rightCols<3>() = DK * (-skew(T.R * v));
        ev.J_pose_a = Jt;
      }
      break;
    }
    case ResidualKind::smoothness: {
      const Pose& Ta = poses_[block.pose_a].value;
      const Pose& Tb = poses_[block.pose_b].value;
      const Pose& Tc = poses_[block.pose_c].value;
      const Pose rel = Tb * Ta.inverse();
      const Pose M = rel * Tb * Tc.inverse();
      const Vec6 eps = se3_log(M);
      ev.residual = eps;
      if (want_jacobians) {
        const Mat6 Jl_inv = se3_left_jacobian_inv(eps);
        ev.J_pose_b = Jl_inv * (Mat6::Identity() + se3_adjoint(rel)) *
                      decoupled_to_twist(Tb);
        ev.J_pose_a = -Jl_inv * se3_adjoint(rel) * decoupled_to_twist(Ta);
        ev.J_pose_c = -Jl_inv * se3_adjoint(M) * decoupled_to_twist(Tc);
      }
      break;
    }
    case ResidualKind::pose_pose: {
      const Pose& Ti = poses_[block.pose_a].value;
      const Pose& Tj = poses_[block.pose_b].value;
      const Pose M = block.obs_rel * Tj * Ti.inverse();
      const Vec6 eps = se3_log(M);
      ev.residual = eps;
      if (want_jacobians) {
        const Mat6 Jl_inv = se3_left_jacobian_inv(eps);
        ev.J_pose_b =
            Jl_inv * se3_adjoint(block.obs_rel) * decoupled_to_twist(Tj);
        ev.J_pose_a = -Jl_inv * se3_adjoint(M) * decoupled_to_twist(Ti);
      }
      break;
    }
    case ResidualKind::sim3_point: {
      const SimTransform& S = sims_[block.sim].value;
      const Vec3& P = points_[block.point].value;
      ev.residual = sim3_point_residual(block.obs_point, P, S, K_);
      if (want_jacobians) {
        const Vec3 q = S.R * P + S.t;
        const Mat<2, 3> Jp = dehomog_jacobian(q, K_);
        ev.J_point = -Jp * S.R;
        MatX Js = MatX::Zero(2, 7);
        Js.leftCols<3>() = Jp * skew(S.R * P);
        Js.middleCols<3>(3) = -Jp;
        // Column 6 (d log s) is zero: the scale cancels in dehomogenization.
        ev.J_sim = Js;
      }
      break;
    }
    case ResidualKind::sim3_line: {
      const SimTransform& S = sims_[block.sim].value;
      const OrthonormalLine& o = lines_[block.line].value;
      auto [n, v] = orthonormal_to_plucker(o);
      const Vec3 nc = transformed_moment(n, v, S.R, S.t, S.s);
      const Vec3 l = Kl * nc;
      ev.residual = incidence_residual(block.obs_e1, block.obs_e2, l);
      if (want_jacobians) {
        const Mat<2, 3> D = incidence_jacobian(block.obs_e1, block.obs_e2, l);
        const Mat<2, 3> DK = D * Kl;
        ev.J_line = DK * line_transform_matrix(S.R, S.t, S.s) *
                    orthonormal_tangent(o);
        MatX Js = MatX::Zero(2, 7);
        Js.leftCols<3>() =
            DK * (-skew(S.R * n) - S.s * skew(S.t) * skew(S.R * v));
        Js.middleCols<3>(3) = DK * (-S.s * skew(S.R * v));
        Js.col(6) = DK * (S.s * S.t.cross(S.R * v));
        ev.J_sim = Js;
      }
      break;
    }
  }
  return ev;
}

namespace {

// Huber rho(z) on the squared norm z and its reweighting factor.
double robust_cost(double z, const std::optional<double>& scale) {
  if (!scale) return z;
  const double k = *scale;
  if (z <= k * k) return z;
  return 2.0 * k * std::sqrt(z) - k * k;
}

double robust_weight(double z, const std::optional<double>& scale) {
  if (!scale) return 1.0;
  const double k = *scale;
  if (z <= k * k) return 1.0;
  return k / std::sqrt(z);
}

}  // namespace

double Problem::cost() const {
  double total = 0;
  for (const auto& b : blocks_) {
    const BlockEval ev = evaluate_block(b, false);
    total += robust_cost(ev.residual.squaredNorm(), b.huber_scale);
  }
  return total;
}

int Problem::assign_offsets() {
  int offset = 0;
  auto assign = [&offset](auto& params, int dim) {
    for (auto& p : params) {
      p.offset = p.constant ? -1 : offset;
      if (!p.constant) offset += dim;
    }
  };
  assign(poses_, 6);
  assign(sims_, 7);
  assign(points_, 3);
  assign(lines_, 4);
  return offset;
}

void Problem::apply_step(const VecX& delta) {
  for (auto& p : poses_) {
    if (p.offset >= 0) {
      p.value = pose_retract(p.value, delta.segment<6>(p.offset));
    }
  }
  for (auto& p : sims_) {
    if (p.offset >= 0) {
      p.value.R = so3_exp(delta.segment<3>(p.offset)) * p.value.R;
      Quat q(p.value.R);
      q.normalize();
      p.value.R = q.toRotationMatrix();
      p.value.t += delta.segment<3>(p.offset + 3);
      p.value.s *= std::exp(delta[p.offset + 6]);
    }
  }
  for (auto& p : points_) {
    if (p.offset >= 0) p.value += delta.segment<3>(p.offset);
  }
  for (auto& p : lines_) {
    if (p.offset >= 0) {
      p.value = orthonormal_retract(p.value, delta.segment<4>(p.offset));
    }
  }
}

SolverReport Problem::solve(const SolverOptions& options) {
  SolverReport report;
  const int total_dim = assign_offsets();
  if (blocks_.empty() || total_dim == 0) {
    report.initial_cost = report.final_cost = cost();
    report.converged = true;
    report.reason = "nothing to optimize";
    return report;
  }

  double lambda = options.initial_lambda;
  double current_cost = cost();
  report.initial_cost = current_cost;
  report.final_cost = current_cost;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    MatX H = MatX::Zero(total_dim, total_dim);
    VecX g = VecX::Zero(total_dim);

    for (const auto& b : blocks_) {
      BlockEval ev = evaluate_block(b, true);
      const double w = robust_weight(ev.residual.squaredNorm(), b.huber_scale);
      const double sw = std::sqrt(w);
      ev.residual *= sw;

      struct Entry {
        int offset;
        const MatX* J;
      };
      std::vector<Entry> entries;
      auto push = [&](int offset, const MatX& J) {
        if (offset >= 0 && J.size() > 0) entries.push_back({offset, &J});
      };
      if (b.pose_a >= 0) push(poses_[b.pose_a].offset, ev.J_pose_a);
      if (b.pose_b >= 0) push(poses_[b.pose_b].offset, ev.J_pose_b);
      if (b.pose_c >= 0) push(poses_[b.pose_c].offset, ev.J_pose_c);
      if (b.sim >= 0) push(sims_[b.sim].offset, ev.J_sim);
      if (b.point >= 0) push(points_[b.point].offset, ev.J_point);
      if (b.line >= 0) push(lines_[b.line].offset, ev.J_line);

      for (auto& e : entries) {
        const MatX J = sw * (*e.J);
        g.segment(e.offset, J.cols()) += J.transpose() * ev.residual;
        for (auto& e2 : entries) {
          const MatX J2 = sw * (*e2.J);
          H.block(e.offset, e2.offset, J.cols(), J2.cols()) +=
              J.transpose() * J2;
        }
      }
    }

    if (g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      report.converged = true;
      report.reason = "gradient tolerance";
      break;
    }

    bool accepted = false;
    while (lambda <= options.max_lambda) {
      MatX H_damped = H;
      for (int i = 0; i < total_dim; ++i) {
        H_damped(i, i) += lambda * std::max(H(i, i), 1e-12);
      }
      const VecX delta = H_damped.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10;
        continue;
      }

      // Trial step on a copy of the parameters.
      auto saved_poses = poses_;
      auto saved_sims = sims_;
      auto saved_points = points_;
      auto saved_lines = lines_;
      apply_step(delta);
      const double trial_cost = cost();
      if (trial_cost <= current_cost) {
        current_cost = trial_cost;
        lambda = std::max(1e-12, lambda * 0.5);
        accepted = true;
        break;
      }
      poses_ = std::move(saved_poses);
      sims_ = std::move(saved_sims);
      points_ = std::move(saved_points);
      lines_ = std::move(saved_lines);
      lambda *= 10;
    }

    report.iterations = iter + 1;
    if (!accepted) {
      report.converged = false;
      report.reason = "damping exhausted";
      break;
    }
    const double prev = report.final_cost;
    report.final_cost = current_cost;
    const double rel_change =
        std::abs(prev - current_cost) / std::max(prev, 1e-30);
    if (rel_change < options.cost_change_tolerance) {
      report.converged = true;
      report.reason = "cost change tolerance";
      break;
    }
    if (iter == options.max_iterations - 1) {
      report.converged = false;
      report.reason = "max iterations";
    }
  }

  report.final_cost = current_cost;
  if (report.reason.empty()) {
    report.converged = true;
    report.reason = "gradient tolerance";
  }
  return report;
}

}  // namespace lf
