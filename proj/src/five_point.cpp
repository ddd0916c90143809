#include "lf/five_point.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <random>

namespace lf {

namespace {

// Dense polynomial in (x, y, z) up to total degree 3 over a fixed monomial
// table: the ten cubics first, then the ten monomials of degree <= 2.
constexpr int kNumMonomials = 20;
const std::array<std::array<int, 3>, kNumMonomials>& monomials() {
  static const std::array<std::array<int, 3>, kNumMonomials> table = {{
      {3, 0, 0}, {2, 1, 0}, {2, 0, 1}, {1, 2, 0}, {1, 1, 1},
      {1, 0, 2}, {0, 3, 0}, {0, 2, 1}, {0, 1, 2}, {0, 0, 3},
      {2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1},
      {0, 0, 2}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0},
  }};
  return table;
}

int monomial_index(int i, int j, int k) {
  const auto& table = monomials();
  for (int m = 0; m < kNumMonomials; ++m) {
    if (table[m][0] == i && table[m][1] == j && table[m][2] == k) return m;
  }
  return -1;
}

struct Poly {
  std::array<double, kNumMonomials> c{};

  static Poly linear(double cx, double cy, double cz, double c1) {
    Poly p;
    p.c[monomial_index(1, 0, 0)] = cx;
    p.c[monomial_index(0, 1, 0)] = cy;
    p.c[monomial_index(0, 0, 1)] = cz;
    p.c[monomial_index(0, 0, 0)] = c1;
    return p;
  }

  Poly operator+(const Poly& o) const {
    Poly out;
    for (int i = 0; i < kNumMonomials; ++i) out.c[i] = c[i] + o.c[i];
    return out;
  }
  Poly operator-(const Poly& o) const {
    Poly out;
    for (int i = 0; i < kNumMonomials; ++i) out.c[i] = c[i] - o.c[i];
    return out;
  }
  Poly operator*(double s) const {
    Poly out;
    for (int i = 0; i < kNumMonomials; ++i) out.c[i] = c[i] * s;
    return out;
  }
  Poly operator*(const Poly& o) const {
    Poly out;
    const auto& table = monomials();
    for (int a = 0; a < kNumMonomials; ++a) {
      if (c[a] == 0.0) continue;
      for (int b = 0; b < kNumMonomials; ++b) {
        if (o.c[b] == 0.0) continue;
        const int i = table[a][0] + table[b][0];
        const int j = table[a][1] + table[b][1];
        const int k = table[a][2] + table[b][2];
        const int idx = monomial_index(i, j, k);
        out.c[idx] += c[a] * o.c[b];
      }
    }
    return out;
  }
};

using PolyMat = std::array<std::array<Poly, 3>, 3>;

}  // namespace

std::vector<Mat3> five_point_essential(const std::vector<Vec2>& x1,
                                       const std::vector<Vec2>& x2) {
  std::vector<Mat3> solutions;
  if (x1.size() < 5 || x1.size() != x2.size()) return solutions;

  // Nullspace of the epipolar constraints (row-major E).
  MatX A(x1.size(), 9);
  for (size_t r = 0; r < x1.size(); ++r) {
    const Vec3 q1(x1[r].x(), x1[r].y(), 1.0);
    const Vec3 q2(x2[r].x(), x2[r].y(), 1.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        A(r, 3 * i + j) = q2[i] * q1[j];
      }
    }
  }
  const Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
  const MatX V = svd.matrixV();
  Mat3 basis[4];
  for (int b = 0; b < 4; ++b) {
    const VecX e = V.col(5 + b);
    basis[b] << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  }

  // E = x B0 + y B1 + z B2 + B3 as a matrix of degree-1 polynomials.
  PolyMat E;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      E[i][j] = Poly::linear(basis[0](i, j), basis[1](i, j), basis[2](i, j),
                             basis[3](i, j));
    }
  }

  // Ten cubic constraints: det(E) = 0 and 2 E E^T E - tr(E E^T) E = 0.
  std::vector<Poly> constraints;
  constraints.push_back(E[0][0] * (E[1][1] * E[2][2] - E[1][2] * E[2][1]) -
                        E[0][1] * (E[1][0] * E[2][2] - E[1][2] * E[2][0]) +
                        E[0][2] * (E[1][0] * E[2][1] - E[1][1] * E[2][0]));
  PolyMat EEt;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      Poly sum;
      for (int k = 0; k < 3; ++k) sum = sum + E[i][k] * E[j][k];
      EEt[i][j] = sum;
    }
  }
  const Poly trace = EEt[0][0] + EEt[1][1] + EEt[2][2];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      Poly sum;
      for (int k = 0; k < 3; ++k) sum = sum + EEt[i][k] * E[k][j];
      constraints.push_back(sum * 2.0 - trace * E[i][j]);
    }
  }

  MatX M(10, kNumMonomials);
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < kNumMonomials; ++c) M(r, c) = constraints[r].c[c];
  }

  // Eliminate the cubic block; bail out on a degenerate sample.
  const MatX left = M.leftCols<10>();
  const Eigen::FullPivLU<MatX> lu(left);
  if (lu.rank() < 10) return solutions;
  const MatX reduced = lu.solve(M.rightCols<10>());  // [I | reduced]

  // Action matrix for multiplication by x on the degree <= 2 basis.
  // Basis order: x^2 xy xz y^2 yz z^2 x y z 1 (columns 10..19 of M).
  MatX action = MatX::Zero(10, 10);
  // x * (x^2, xy, xz, y^2, yz, z^2) are cubics 0..5 in the monomial table.
  for (int c = 0; c < 6; ++c) action.col(c) = -reduced.row(c).transpose();
  action(0, 6) = 1.0;  // x * x = x^2
  action(1, 7) = 1.0;  // x * y = xy
  action(2, 8) = 1.0;  // x * z = xz
  action(6, 9) = 1.0;  // x * 1 = x

  const Eigen::EigenSolver<MatX> eig(action);
  for (int i = 0; i < 10; ++i) {
    const std::complex<double> lam = eig.eigenvalues()[i];
    if (std::abs(lam.imag()) > 1e-8 * (1.0 + std::abs(lam.real()))) continue;
    const Eigen::VectorXcd vc = eig.eigenvectors().col(i);
    if (std::abs(vc[9]) < 1e-12) continue;
    const double x = (vc[6] / vc[9]).real();
    const double y = (vc[7] / vc[9]).real();
    const double z = (vc[8] / vc[9]).real();
    Mat3 Em = x * basis[0] + y * basis[1] + z * basis[2] + basis[3];
    const double norm = Em.norm();
    if (!(norm > 1e-12) || !Em.allFinite()) continue;
    solutions.push_back(Em / norm);
  }
  return solutions;
}

double sampson_error(const Mat3& E, const Vec2& q1, const Vec2& q2) {
  const Vec3 p1(q1.x(), q1.y(), 1.0);
  const Vec3 p2(q2.x(), q2.y(), 1.0);
  const Vec3 Ep1 = E * p1;
  const Vec3 Etp2 = E.transpose() * p2;
  const double r = p2.dot(Ep1);
  const double denom = Ep1.head<2>().squaredNorm() + Etp2.head<2>().squaredNorm();
  if (denom < 1e-18) return 1e18;
  return r * r / denom;
}

EssentialRansacResult ransac_essential(const std::vector<Vec2>& x1,
                                       const std::vector<Vec2>& x2,
                                       double sampson_threshold,
                                       int iterations, uint64_t seed) {
  EssentialRansacResult result;
  const int n = int(x1.size());
  if (n < 5 || x1.size() != x2.size()) return result;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);

  int best_count = 0;
  for (int iter = 0; iter < iterations; ++iter) {
    std::array<int, 5> idx{};
    for (int k = 0; k < 5; ++k) {
      int candidate;
      bool fresh;
      do {
        candidate = pick(rng);
        fresh = true;
        for (int j = 0; j < k; ++j) fresh &= (idx[j] != candidate);
      } while (!fresh);
      idx[k] = candidate;
    }
    std::vector<Vec2> s1(5), s2(5);
    for (int k = 0; k < 5; ++k) {
      s1[k] = x1[idx[k]];
      s2[k] = x2[idx[k]];
    }
    for (const Mat3& E : five_point_essential(s1, s2)) {
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (sampson_error(E, x1[i], x2[i]) < sampson_threshold) ++count;
      }
      if (count > best_count) {
        best_count = count;
        result.E = E;
        result.ok = true;
      }
    }
  }
  if (result.ok) {
    result.inliers.clear();
    for (int i = 0; i < n; ++i) {
      if (sampson_error(result.E, x1[i], x2[i]) < sampson_threshold) {
        result.inliers.push_back(i);
      }
    }
  }
  return result;
}

Vec3 triangulate_point(const Pose& T1, const Pose& T2, const Vec2& q1,
                       const Vec2& q2) {
  Mat<3, 4> P1, P2;
  P1.leftCols<3>() = T1.R;
  P1.col(3) = T1.t;
  P2.leftCols<3>() = T2.R;
  P2.col(3) = T2.t;
  Mat4 A;
  A.row(0) = q1.x() * P1.row(2) - P1.row(0);
  A.row(1) = q1.y() * P1.row(2) - P1.row(1);
  A.row(2) = q2.x() * P2.row(2) - P2.row(0);
  A.row(3) = q2.y() * P2.row(2) - P2.row(1);
  const Eigen::JacobiSVD<Mat4> svd(A, Eigen::ComputeFullV);
  const Vec4 X = svd.matrixV().col(3);
  return X.head<3>() / X[3];
}

RecoveredPose recover_pose_from_essential(const Mat3& E,
                                          const std::vector<Vec2>& x1,
                                          const std::vector<Vec2>& x2,
                                          const std::vector<int>& inliers) {
  RecoveredPose best;
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0) U = -U;
  if (V.determinant() < 0) V = -V;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  const Mat3 candidates_R[2] = {U * W * V.transpose(),
                                U * W.transpose() * V.transpose()};
  const Vec3 t_unit = U.col(2);

  int best_count = -1;
  for (const Mat3& R : candidates_R) {
    for (const double sign : {1.0, -1.0}) {
      const Vec3 t = sign * t_unit;
      const Pose T1 = Pose::identity();
      const Pose T2{R, t};
      RecoveredPose candidate;
      candidate.R = R;
      candidate.t = t;
      std::vector<double> parallax;
      int good = 0;
      for (int idx : inliers) {
        const Vec3 X = triangulate_point(T1, T2, x1[idx], x2[idx]);
        if (!X.allFinite()) continue;
        const Vec3 Xc2 = T2.apply(X);
        if (X.z() <= 1e-6 || Xc2.z() <= 1e-6) continue;
        const Vec3 ray1 = X;                  // camera 1 at the origin
        const Vec3 ray2 = X - T2.center();
        const double cosang =
            ray1.normalized().dot(ray2.normalized());
        parallax.push_back(std::acos(std::clamp(cosang, -1.0, 1.0)));
        candidate.points.push_back(X);
        candidate.point_ids.push_back(idx);
        ++good;
      }
      if (good > best_count) {
        best_count = good;
        if (!parallax.empty()) {
          std::nth_element(parallax.begin(),
                           parallax.begin() + parallax.size() / 2,
                           parallax.end());
          candidate.median_parallax_rad = parallax[parallax.size() / 2];
        }
        candidate.ok = good >= std::max<int>(8, int(inliers.size()) / 3);
        best = std::move(candidate);
      }
    }
  }
  return best;
}

}  // namespace lf
