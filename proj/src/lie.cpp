#include "rodo/lie.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace rodo {

Mat3 hat(const Vec3& v) {
  Mat3 m;
  // clang-format off
  m <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  // clang-format on
  return m;
}

Vec3 vee(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  double a;  // sin(theta)/theta
  double b;  // (1 - cos(theta))/theta^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& rot) {
  // R - R^T = 2 sin(theta) hat(axis).
  const Vec3 axial = 0.5 * vee(rot - rot.transpose());
  const double cos_theta = (rot.trace() - 1.0) * 0.5;
  const double sin_theta = axial.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta >= M_PI - kLogAngleMargin) {
    throw AngleNearPi("so3_log: rotation angle within margin of pi");
  }
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    return axial * (1.0 + t2 / 6.0);
  }
  return axial * (theta / sin_theta);
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  double b;  // (1 - cos)/theta^2
  double c;  // (theta - sin)/theta^3
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    b = (1.0 - std::cos(theta)) / t2;
    c = (theta - std::sin(theta)) / (t2 * theta);
  }
  return Mat3::Identity() + b * k + c * k * k;
}

Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  double c;
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    c = 1.0 / 12.0 + t2 / 720.0;
  } else {
    c = 1.0 / (theta * theta) -
        (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * k + c * k * k;
}

SE3 SE3::exp(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return SE3(so3_exp(phi), so3_left_jacobian(phi) * rho);
}

Twist SE3::log() const {
  const Vec3 phi = so3_log(rot_);
  Twist xi;
  xi.head<3>() = so3_left_jacobian_inverse(phi) * trans_;
  xi.tail<3>() = phi;
  return xi;
}

SE3 SE3::inverse() const {
  SE3 inv(rot_.transpose(), -(rot_.transpose() * trans_));
  inv.compositions_ = compositions_;
  return inv;
}

SE3 SE3::operator*(const SE3& rhs) const {
  SE3 out(rot_ * rhs.rot_, rot_ * rhs.trans_ + trans_);
  out.compositions_ = std::max(compositions_, rhs.compositions_) + 1;
  if (out.compositions_ >= kRenormEvery) {
    out.reorthonormalize();
  }
  return out;
}

Mat6 SE3::adjoint() const {
  Mat6 adj = Mat6::Zero();
  adj.block<3, 3>(0, 0) = rot_;
  adj.block<3, 3>(0, 3) = hat(trans_) * rot_;
  adj.block<3, 3>(3, 3) = rot_;
  return adj;
}

Mat4 SE3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = rot_;
  m.block<3, 1>(0, 3) = trans_;
  return m;
}

void SE3::reorthonormalize() {
  Eigen::JacobiSVD<Mat3> svd(rot_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  rot_ = r;
  compositions_ = 0;
}

bool SE3::is_identity(double tol) const {
  return (rot_ - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         trans_.cwiseAbs().maxCoeff() <= tol;
}

Mat6 se3_left_jacobian(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const double theta = phi.norm();
  const Mat3 rx = hat(rho);
  const Mat3 px = hat(phi);

  double c2;  // (theta - sin)/theta^3
  double c3;  // (1 - theta^2/2 - cos)/theta^4
  double c4;  // (theta - sin - theta^3/6)/theta^5
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    c2 = 1.0 / 6.0 - t2 / 120.0;
    c3 = 1.0 / 24.0 - t2 / 720.0;
    c4 = -1.0 / 120.0 + t2 / 5040.0;
  } else {
    const double t2 = theta * theta;
    const double t4 = t2 * t2;
    c2 = (theta - std::sin(theta)) / (t2 * theta);
    c3 = (1.0 - 0.5 * t2 - std::cos(theta)) / t4;
    c4 = (theta - std::sin(theta) - t2 * theta / 6.0) / (t4 * theta);
  }

  const Mat3 q = 0.5 * rx + c2 * (px * rx + rx * px + px * rx * px) -
                 c3 * (px * px * rx + rx * px * px - 3.0 * px * rx * px) -
                 0.5 * (c3 - 3.0 * c4) * (px * rx * px * px + px * px * rx * px);

  const Mat3 j = so3_left_jacobian(phi);
  Mat6 out = Mat6::Zero();
  out.block<3, 3>(0, 0) = j;
  out.block<3, 3>(0, 3) = q;
  out.block<3, 3>(3, 3) = j;
  return out;
}

}  // namespace rodo
