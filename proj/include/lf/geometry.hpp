#pragma once

#include <cmath>
#include <utility>

#include "lf/errors.hpp"
#include "lf/types.hpp"

namespace lf {

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);
// Wraps an angle to [0, 2*pi).
double wrap_angle_2pi(double a);
// Folds an undirected (axial) angle to [0, pi).
double fold_angle_pi(double a);
// Circular distance between two directed angles, in [0, pi].
double angle_distance(double a, double b);
// Circular distance between two undirected angles, in [0, pi/2].
double axial_distance(double a, double b);

Mat3 skew(const Vec3& w);

// Pinhole camera. Point and line intrinsic matrices share these four scalars.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double x0 = 0.0;
  double y0 = 0.0;

  Mat3 point_matrix() const {
    Mat3 k;
    k << fx, 0, x0, 0, fy, y0, 0, 0, 1;
    return k;
  }

  // Maps a camera-frame line moment to the homogeneous image line.
  // Proportional to det(K_p) * K_p^{-T}, so the line through two projected
  // points equals the mapped Plucker projection up to scale.
  Mat3 line_matrix() const {
    Mat3 k;
    k << fy, 0, 0, 0, fx, 0, -fy * x0, -fx * y0, fx * fy;
    return k;
  }

  Vec2 project(const Vec3& cam_point) const {
    return {fx * cam_point.x() / cam_point.z() + x0,
            fy * cam_point.y() / cam_point.z() + y0};
  }

  Vec3 unproject(const Vec2& px) const {
    return {(px.x() - x0) / fx, (px.y() - y0) / fy, 1.0};
  }
};

// Rigid world-to-camera transform: x_cam = R * x_world + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return R * x + t; }
  Pose inverse() const { return {R.transpose(), -R.transpose() * t}; }
  Pose operator*(const Pose& rhs) const {
    return {R * rhs.R, R * rhs.t + t};
  }
  Vec3 center() const { return -R.transpose() * t; }

  bool rotation_valid(double tol = 1e-9) const {
    return (R.transpose() * R - Mat3::Identity()).norm() < tol &&
           std::abs(R.determinant() - 1.0) < tol;
  }
};

// Similarity transform with positive scale; x' = s * (R * x + t).
struct SimTransform {
  double s = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Pose pose() const { return {R, t}; }
};

// Oriented 2D segment (theta, l, x, y): direction theta, length, midpoint.
struct LineSegment2D {
  double theta = 0.0;   // [0, 2*pi), direction matters
  double length = 0.0;  // px, > 0
  Vec2 mid = Vec2::Zero();

  Vec2 direction() const { return {std::cos(theta), std::sin(theta)}; }
  Vec2 start() const { return mid - 0.5 * length * direction(); }
  Vec2 end() const { return mid + 0.5 * length * direction(); }

  // Homogeneous image line through the endpoints.
  Vec3 homogeneous_line() const {
    const Vec2 d = direction();
    // Normal (-dy, dx), offset so that mid lies on the line.
    return {-d.y(), d.x(), d.y() * mid.x() - d.x() * mid.y()};
  }

  // Flips orientation by pi, keeping the same undirected segment.
  LineSegment2D reversed() const {
    return {wrap_angle_2pi(theta + M_PI), length, mid};
  }
};

std::pair<Vec2, Vec2> endpoints_from_params(const LineSegment2D& seg);
LineSegment2D params_from_endpoints(const Vec2& e_s, const Vec2& e_t);

// Fuses two collinear segments into one spanning segment: the direction is
// the length-weighted mean axis, the extent covers both inputs. The result
// is oriented like `a`.
LineSegment2D fuse_segments_span(const LineSegment2D& a,
                                 const LineSegment2D& b);

// Perpendicular distance from a point to the infinite line through seg.
double point_to_segment_line_distance(const Vec2& p, const LineSegment2D& seg);

// 3D line in Plucker coordinates (moment n, direction v) with maintained
// endpoints on the infinite line. n . v = 0.
struct Line3D {
  Vec3 n = Vec3::Zero();
  Vec3 v = Vec3::UnitX();
  Vec3 start_point = Vec3::Zero();  // E_s
  Vec3 end_point = Vec3::Zero();    // E_t

  // A point on the infinite line closest to the origin.
  Vec3 origin_foot() const { return v.cross(n) / v.squaredNorm(); }
  // Closest point on the infinite line to x.
  Vec3 closest_point(const Vec3& x) const {
    const Vec3 p0 = origin_foot();
    const Vec3 vn = v.normalized();
    return p0 + vn.dot(x - p0) * vn;
  }

  static Line3D through_points(const Vec3& a, const Vec3& b) {
    Line3D l;
    l.v = b - a;
    l.n = a.cross(b);
    l.start_point = a;
    l.end_point = b;
    return l;
  }
};

// Minimal 4-DoF line parameterization: U in SO(3), W in SO(2).
struct OrthonormalLine {
  Mat3 U = Mat3::Identity();
  double sigma1 = 1.0;
  double sigma2 = 0.0;

  Mat2 W() const {
    Mat2 w;
    w << sigma1, -sigma2, sigma2, sigma1;
    return w;
  }
};

// Plane n . X + d = 0.
struct Plane {
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;
};

// Plucker line in the camera frame: n' = R n + [t]x R v, v' = R v.
// Endpoints are transformed pointwise.
Line3D transform_line(const Line3D& line, const Pose& T);

// Homogeneous image line of the projected 3D line, l = K_l * n_cam.
// Throws DegenerateProjection when the line passes through the camera center.
Vec3 project_line(const Line3D& line, const Pose& T, const CameraIntrinsics& K);

OrthonormalLine plucker_to_orthonormal(const Line3D& line);
OrthonormalLine plucker_to_orthonormal(const Vec3& n, const Vec3& v);
// Returns (n, v) of unit joint norm; the input line up to positive scale.
std::pair<Vec3, Vec3> orthonormal_to_plucker(const OrthonormalLine& o);

// Right-multiplicative retraction used inside optimization:
// U <- U exp([d_theta]x), W <- W Rot(d_sigma).
OrthonormalLine orthonormal_retract(const OrthonormalLine& o, const Vec4& delta);

// Back-projection plane of a 2D segment: passes through the camera center and
// both endpoint rays.
Plane plane_from_segment(const LineSegment2D& seg, const Pose& T,
                         const CameraIntrinsics& K);

// SO(3) exponential/logarithm with stable small-angle and near-pi branches.
Mat3 so3_exp(const Vec3& w);
Vec3 so3_log(const Mat3& R);

// SE(3) tangent ordering: (rotation, translation). log(I) = 0 and
// log of a pure translation is (0, 0, 0, t).
Pose se3_exp(const Vec6& xi);
Vec6 se3_log(const Pose& T);

// Adjoint of T for the (rotation, translation) tangent ordering.
Mat6 se3_adjoint(const Pose& T);
// Left Jacobian of SE(3) and its inverse, evaluated by the adjoint series.
Mat6 se3_left_jacobian(const Vec6& xi);
Mat6 se3_left_jacobian_inv(const Vec6& xi);

// Decoupled pose retraction used by the solver and the Jacobians:
// R <- exp([phi]x) R, t <- t + rho, with delta = (phi, rho).
Pose pose_retract(const Pose& T, const Vec6& delta);

// Closest point on `line` to the ray (origin, dir). Throws RayParallel when
// the ray and the line are parallel within tolerance.
Vec3 ray_line_closest_point(const Vec3& ray_origin, const Vec3& ray_dir,
                            const Line3D& line);

}  // namespace lf
