#pragma once

#include <Eigen/Dense>

#include "rodo/errors.hpp"

namespace rodo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Tangent-space increment of SE(3), packed (rho, phi): translation part
// first (meters), rotation part second (radians).
using Twist = Vec6;

// Angle below which exp/log/left-Jacobian formulas switch to their Taylor
// expansions to avoid 0/0.
inline constexpr double kSmallAngle = 1e-6;

// Rotations are rejected from log() when the angle is within this margin of
// pi (branch ambiguity).
inline constexpr double kLogAngleMargin = 1e-6;

// skew(v) * w == v x w
Mat3 hat(const Vec3& v);
Vec3 vee(const Mat3& m);

Mat3 so3_exp(const Vec3& phi);
// Principal branch; throws AngleNearPi when the angle is >= pi - margin.
Vec3 so3_log(const Mat3& rot);

// Left Jacobian of SO(3) (the V matrix in Exp(xi) = [exp(phi), V(phi) rho]).
Mat3 so3_left_jacobian(const Vec3& phi);
Mat3 so3_left_jacobian_inverse(const Vec3& phi);

// Rigid transform in SE(3). Semantics throughout this project:
// x_sensor = R * x_world + t (world -> sensor).
class SE3 {
 public:
  SE3() : rot_(Mat3::Identity()), trans_(Vec3::Zero()) {}
  SE3(const Mat3& rot, const Vec3& trans) : rot_(rot), trans_(trans) {}

  static SE3 exp(const Twist& xi);
  // Principal branch; throws AngleNearPi near the cut.
  Twist log() const;

  SE3 inverse() const;
  SE3 operator*(const SE3& rhs) const;
  Vec3 operator*(const Vec3& p) const { return rot_ * p + trans_; }

  // Adj such that Exp(Adj * xi) * T == T * Exp(xi); with (rho, phi) packing
  // Adj = [[R, hat(t) R], [0, R]].
  Mat6 adjoint() const;

  const Mat3& rotation() const { return rot_; }
  const Vec3& translation() const { return trans_; }

  Mat4 matrix() const;
  static SE3 from_matrix(const Mat4& m) {
    return SE3(m.block<3, 3>(0, 0), m.block<3, 1>(0, 3));
  }

  // Projects the rotation back onto SO(3) (polar decomposition).
  void reorthonormalize();

  bool is_identity(double tol = 0.0) const;

 private:
  Mat3 rot_;
  Vec3 trans_;
  // Compositions since the last re-orthonormalization; chains longer than
  // kRenormEvery get their rotation projected back onto SO(3).
  int compositions_ = 0;
  static constexpr int kRenormEvery = 100;
};

// Left-multiplicative retraction: Exp(dxi) * T.
inline SE3 retract(const SE3& pose, const Twist& dxi) {
  return SE3::exp(dxi) * pose;
}

// Left Jacobian of SE(3): Exp(xi + d) ~= Exp(J_l(xi) d) * Exp(xi).
// Block form [[J_so3, Q], [0, J_so3]] with Barfoot's Q matrix.
Mat6 se3_left_jacobian(const Twist& xi);

}  // namespace rodo
