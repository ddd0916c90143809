#include "lf/geometry.hpp"

#include <Eigen/Dense>
#include <limits>

namespace lf {

double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI == -M_PI ? M_PI : a - M_PI;
}

double wrap_angle_2pi(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a;
}

double fold_angle_pi(double a) {
  a = std::fmod(a, M_PI);
  if (a < 0) a += M_PI;
  return a == M_PI ? 0.0 : a;
}

double angle_distance(double a, double b) {
  return std::abs(wrap_angle(a - b));
}

double axial_distance(double a, double b) {
  double d = std::abs(wrap_angle(a - b));
  return d > M_PI / 2 ? M_PI - d : d;
}

Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

std::pair<Vec2, Vec2> endpoints_from_params(const LineSegment2D& seg) {
  return {seg.start(), seg.end()};
}

LineSegment2D params_from_endpoints(const Vec2& e_s, const Vec2& e_t) {
  LineSegment2D seg;
  const Vec2 d = e_t - e_s;
  seg.theta = wrap_angle_2pi(std::atan2(d.y(), d.x()));
  seg.length = d.norm();
  seg.mid = 0.5 * (e_s + e_t);
  return seg;
}

LineSegment2D fuse_segments_span(const LineSegment2D& a,
                                 const LineSegment2D& b) {
  const double wa = a.length, wb = b.length;
  // Axial (mod-pi) weighted mean direction via doubled angles.
  const double cx = wa * std::cos(2 * a.theta) + wb * std::cos(2 * b.theta);
  const double cy = wa * std::sin(2 * a.theta) + wb * std::sin(2 * b.theta);
  double axis = 0.5 * std::atan2(cy, cx);
  if (angle_distance(axis, a.theta) > M_PI / 2) axis += M_PI;
  const Vec2 d(std::cos(axis), std::sin(axis));
  const Vec2 mid0 = (wa * a.mid + wb * b.mid) / (wa + wb);
  double lo = std::numeric_limits<double>::max();
  double hi = std::numeric_limits<double>::lowest();
  for (const Vec2& e : {a.start(), a.end(), b.start(), b.end()}) {
    const double s = (e - mid0).dot(d);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  LineSegment2D out;
  out.theta = wrap_angle_2pi(axis);
  out.length = hi - lo;
  out.mid = mid0 + 0.5 * (hi + lo) * d;
  return out;
}

double point_to_segment_line_distance(const Vec2& p, const LineSegment2D& seg) {
  const Vec2 d = seg.direction();
  const Vec2 r = p - seg.mid;
  return std::abs(r.x() * d.y() - r.y() * d.x());
}

Line3D transform_line(const Line3D& line, const Pose& T) {
  Line3D out;
  out.v = T.R * line.v;
  out.n = T.R * line.n + skew(T.t) * out.v;
  out.start_point = T.apply(line.start_point);
  out.end_point = T.apply(line.end_point);
  return out;
}

Vec3 project_line(const Line3D& line, const Pose& T,
                  const CameraIntrinsics& K) {
  const Line3D cam = transform_line(line, T);
  const Vec3 l = K.line_matrix() * cam.n;
  if (l.head<2>().norm() < 1e-12) {
    throw DegenerateProjection("line projects through the optical center");
  }
  return l;
}

namespace {

// Smallest-index basis vector not parallel to v, orthogonalized against it.
Vec3 orthogonal_completion(const Vec3& v_unit) {
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Unit(i);
    Vec3 u = e - e.dot(v_unit) * v_unit;
    if (u.norm() > 1e-6) return u.normalized();
  }
  throw DegenerateLine("cannot complete orthogonal basis");
}

}  // namespace

OrthonormalLine plucker_to_orthonormal(const Vec3& n, const Vec3& v) {
  const double nn = n.norm();
  const double nv = v.norm();
  if (nn < 1e-12 && nv < 1e-12) {
    throw DegenerateLine("both moment and direction are null");
  }
  OrthonormalLine o;
  const double scale = std::sqrt(nn * nn + nv * nv);
  o.sigma1 = nn / scale;
  o.sigma2 = nv / scale;
  Vec3 u1, u2;
  if (nn < 1e-12) {
    u2 = v / nv;
    u1 = orthogonal_completion(u2);
  } else if (nv < 1e-12) {
    u1 = n / nn;
    u2 = orthogonal_completion(u1);
  } else {
    u1 = n / nn;
    u2 = v / nv;
  }
  const Vec3 u3 = u1.cross(u2).normalized();
  // Re-orthogonalize the middle column against accumulated drift.
  u2 = u3.cross(u1).normalized();
  o.U.col(0) = u1;
  o.U.col(1) = u2;
  o.U.col(2) = u3;
  return o;
}

OrthonormalLine plucker_to_orthonormal(const Line3D& line) {
  return plucker_to_orthonormal(line.n, line.v);
}

std::pair<Vec3, Vec3> orthonormal_to_plucker(const OrthonormalLine& o) {
  return {o.sigma1 * o.U.col(0), o.sigma2 * o.U.col(1)};
}

OrthonormalLine orthonormal_retract(const OrthonormalLine& o,
                                    const Vec4& delta) {
  OrthonormalLine out;
  out.U = o.U * so3_exp(delta.head<3>());
  // Renormalize through a quaternion to stay in SO(3).
  Quat q(out.U);
  q.normalize();
  out.U = q.toRotationMatrix();
  const double c = std::cos(delta[3]);
  const double s = std::sin(delta[3]);
  double s1 = o.sigma1 * c - o.sigma2 * s;
  double s2 = o.sigma1 * s + o.sigma2 * c;
  const double norm = std::hypot(s1, s2);
  out.sigma1 = s1 / norm;
  out.sigma2 = s2 / norm;
  return out;
}

Plane plane_from_segment(const LineSegment2D& seg, const Pose& T,
                         const CameraIntrinsics& K) {
  const Vec3 l = seg.homogeneous_line();
  // Camera-frame plane normal through the center: K_p^T l.
  const Vec3 n_cam = K.point_matrix().transpose() * l;
  Plane p;
  p.n = T.R.transpose() * n_cam;
  p.d = T.t.dot(n_cam);
  return p;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-9) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
  Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double tr = R.trace();
  const double cos_theta = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
  const double sin_theta = 0.5 * w.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < 1e-9) {
    return 0.5 * w;
  }
  if (cos_theta > -0.99) {
    return (theta / (2.0 * sin_theta)) * w;
  }
  // Near pi: the symmetrized residual (1 - cos) a a^T carries the axis.
  const Mat3 A = 0.5 * (R + R.transpose()) - cos_theta * Mat3::Identity();
  int k;
  A.diagonal().maxCoeff(&k);
  Vec3 axis = A.col(k).normalized();
  if (axis.dot(w) < 0) axis = -axis;
  return theta * axis;
}

namespace {

Mat3 so3_left_jacobian(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-9) {
    return Mat3::Identity() + 0.5 * W + W * W / 6.0;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

// ad_xi for the (rotation, translation) ordering.
Mat6 se3_ad(const Vec6& xi) {
  Mat6 ad = Mat6::Zero();
  const Mat3 wx = skew(xi.head<3>());
  ad.topLeftCorner<3, 3>() = wx;
  ad.bottomRightCorner<3, 3>() = wx;
  ad.bottomLeftCorner<3, 3>() = skew(xi.tail<3>());
  return ad;
}

}  // namespace

Pose se3_exp(const Vec6& xi) {
  Pose T;
  T.R = so3_exp(xi.head<3>());
  T.t = so3_left_jacobian(xi.head<3>()) * xi.tail<3>();
  return T;
}

Vec6 se3_log(const Pose& T) {
  Vec6 xi;
  xi.head<3>() = so3_log(T.R);
  xi.tail<3>() = so3_left_jacobian(xi.head<3>()).inverse() * T.t;
  return xi;
}

Mat6 se3_adjoint(const Pose& T) {
  Mat6 adj = Mat6::Zero();
  adj.topLeftCorner<3, 3>() = T.R;
  adj.bottomRightCorner<3, 3>() = T.R;
  adj.bottomLeftCorner<3, 3>() = skew(T.t) * T.R;
  return adj;
}

Mat6 se3_left_jacobian(const Vec6& xi) {
  // J_l = sum_n ad^n / (n+1)!, converges for all xi.
  const Mat6 ad = se3_ad(xi);
  Mat6 sum = Mat6::Identity();
  Mat6 term = Mat6::Identity();
  for (int n = 1; n < 60; ++n) {
    term = (term * ad) / double(n + 1);
    sum += term;
    if (term.norm() < 1e-18) break;
  }
  return sum;
}

Mat6 se3_left_jacobian_inv(const Vec6& xi) {
  return se3_left_jacobian(xi).inverse();
}

Pose pose_retract(const Pose& T, const Vec6& delta) {
  Pose out;
  out.R = so3_exp(delta.head<3>()) * T.R;
  Quat q(out.R);
  q.normalize();
  out.R = q.toRotationMatrix();
  out.t = T.t + delta.tail<3>();
  return out;
}

Vec3 ray_line_closest_point(const Vec3& ray_origin, const Vec3& ray_dir,
                            const Line3D& line) {
  const Vec3 d1 = ray_dir.normalized();
  const Vec3 d2 = line.v.normalized();
  const Vec3 p2 = line.origin_foot();
  const double c = d1.dot(d2);
  const double denom = 1.0 - c * c;
  if (denom < 1e-18) {
    throw RayParallel("back-projection ray parallel to the 3D line");
  }
  const Vec3 r = p2 - ray_origin;
  // Closest-approach parameter on the 3D line.
  const double s2 = (c * d1.dot(r) - d2.dot(r)) / denom;
  return p2 + s2 * d2;
}

}  // namespace lf
