#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lf/geometry.hpp"

namespace lf {

enum class ResidualKind {
  point,
  line,
  smoothness,
  pose_pose,
  sim3_point,
  sim3_line,
};

// Reprojection error of a 3D point: p - project(R P + t).
// Throws BehindCamera when the camera-frame depth is not positive.
Vec2 point_residual(const Vec2& p, const Vec3& P, const Pose& T,
                    const CameraIntrinsics& K);

// Signed normalized distances of the two observed endpoints to the projected
// line of (n, v). Invariant to positive rescaling of the Plucker coordinates.
Vec2 line_residual(const Vec2& e1, const Vec2& e2, const Vec3& n,
                   const Vec3& v, const Pose& T, const CameraIntrinsics& K);

// Constant-rigid-motion residual log(T_b T_a^-1 T_b T_c^-1) for the pose
// triple (T_a, T_b, T_c) = (T_{t-2}, T_{t-1}, T_t).
Vec6 smoothness_residual(const Pose& T_a, const Pose& T_b, const Pose& T_c);

// Relative-pose constraint residual log(T_obs T_j T_i^-1).
Vec6 pose_pose_residual(const Pose& T_obs, const Pose& T_i, const Pose& T_j);

// Similarity-transform variants; both reduce to the SE(3) residuals at s = 1.
Vec2 sim3_point_residual(const Vec2& p, const Vec3& P, const SimTransform& S,
                         const CameraIntrinsics& K);
Vec2 sim3_line_residual(const Vec2& e1, const Vec2& e2, const Vec3& n,
                        const Vec3& v, const SimTransform& S,
                        const CameraIntrinsics& K);

// One term of a least-squares problem. Parameter handles index the owning
// Problem; unused handles stay -1.
struct ResidualBlock {
  ResidualKind kind = ResidualKind::point;
  int pose_a = -1;  // smoothness T_{t-2} / pose_pose T_i / point & line pose
  int pose_b = -1;  // smoothness T_{t-1} / pose_pose T_j
  int pose_c = -1;  // smoothness T_t
  int sim = -1;
  int point = -1;
  int line = -1;
  Vec2 obs_point = Vec2::Zero();
  Vec2 obs_e1 = Vec2::Zero();
  Vec2 obs_e2 = Vec2::Zero();
  Pose obs_rel;                        // pose_pose constraint
  std::optional<double> huber_scale;   // robust loss; none = plain quadratic

  int dimension() const {
    return kind == ResidualKind::smoothness || kind == ResidualKind::pose_pose
               ? 6
               : 2;
  }
};

// Residual and Jacobians of one block with respect to the tangent of every
// involved parameter. Pose tangents are (phi, rho) with R <- exp([phi]x) R,
// t <- t + rho; sim tangents append d_log_s; line tangents are the 4-DoF
// orthonormal deltas.
struct BlockEval {
  VecX residual;
  MatX J_pose_a, J_pose_b, J_pose_c;  // dim x 6
  MatX J_sim;                         // dim x 7
  MatX J_point;                       // dim x 3
  MatX J_line;                        // dim x 4
};

struct SolverOptions {
  int max_iterations = 50;
  double gradient_tolerance = 1e-8;
  double cost_change_tolerance = 1e-10;
  double initial_lambda = 1e-4;
  double max_lambda = 1e14;
};

struct SolverReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  std::string reason;
};

class Problem {
 public:
  explicit Problem(const CameraIntrinsics& K) : K_(K) {}

  int add_pose(const Pose& T, bool constant = false);
  int add_sim(const SimTransform& S, bool constant = false);
  int add_point(const Vec3& P, bool constant = false);
  int add_line(const OrthonormalLine& L, bool constant = false);
  int add_line(const Line3D& L, bool constant = false) {
    return add_line(plucker_to_orthonormal(L), constant);
  }

  void add_block(const ResidualBlock& block) { blocks_.push_back(block); }

  const Pose& pose(int id) const { return poses_[id].value; }
  const SimTransform& sim(int id) const { return sims_[id].value; }
  const Vec3& point(int id) const { return points_[id].value; }
  const OrthonormalLine& line(int id) const { return lines_[id].value; }
  Pose& mutable_pose(int id) { return poses_[id].value; }
  SimTransform& mutable_sim(int id) { return sims_[id].value; }
  Vec3& mutable_point(int id) { return points_[id].value; }
  OrthonormalLine& mutable_line(int id) { return lines_[id].value; }

  void set_pose_constant(int id, bool constant) {
    poses_[id].constant = constant;
  }

  const CameraIntrinsics& intrinsics() const { return K_; }
  size_t num_blocks() const { return blocks_.size(); }
  const ResidualBlock& block(size_t i) const { return blocks_[i]; }

  BlockEval evaluate_block(const ResidualBlock& block,
                           bool want_jacobians) const;

  // Total robust cost of all blocks at the current parameters.
  double cost() const;

  SolverReport solve(const SolverOptions& options = {});

 private:
  template <typename T>
  struct Param {
    T value;
    bool constant = false;
    int offset = -1;
  };

  int assign_offsets();
  void apply_step(const VecX& delta);

  CameraIntrinsics K_;
  std::vector<Param<Pose>> poses_;
  std::vector<Param<SimTransform>> sims_;
  std::vector<Param<Vec3>> points_;
  std::vector<Param<OrthonormalLine>> lines_;
  std::vector<ResidualBlock> blocks_;
};

}  // namespace lf
