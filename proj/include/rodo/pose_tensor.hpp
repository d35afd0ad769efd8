#pragma once

#include <vector>

#include "rodo/lie.hpp"
#include "rodo/tensor.hpp"

namespace rodo {

// Pose tensors are (F, 12) rows [R row-major | t]. Tape gradients on them are
// plain value gradients; the helpers below convert between those and left
// tangent gradients so optimization layers can do their math in se(3).

inline SE3 pose_from_row(const double* row) {
  Mat3 r;
  r << row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8];
  return SE3(r, Vec3(row[9], row[10], row[11]));
}

inline void write_pose_row(double* row, const SE3& pose) {
  const Mat3& r = pose.rotation();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) row[i * 3 + j] = r(i, j);
  const Vec3& t = pose.translation();
  row[9] = t.x();
  row[10] = t.y();
  row[11] = t.z();
}

inline Tensor pose_state_from(const std::vector<SE3>& poses) {
  Tensor state({static_cast<int>(poses.size()), 12}, 0.0);
  for (std::size_t f = 0; f < poses.size(); ++f)
    write_pose_row(state.mutable_values().data() + f * 12, poses[f]);
  return state;
}

inline std::vector<SE3> poses_from_state(const Tensor& state) {
  std::vector<SE3> poses(state.dim(0));
  for (int f = 0; f < state.dim(0); ++f)
    poses[f] = pose_from_row(state.values().data() + f * 12);
  return poses;
}

// Antisymmetric projection paired with hat: axial(hat(v)) = 2v.
inline Vec3 axial(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

// Value gradient of one pose row -> gradient wrt a left perturbation
// Exp(eps) * T, packed (rho, phi).
inline Twist extract_tangent_grad(const double* grad_row, const SE3& pose) {
  Mat3 gr;
  gr << grad_row[0], grad_row[1], grad_row[2], grad_row[3], grad_row[4],
      grad_row[5], grad_row[6], grad_row[7], grad_row[8];
  const Vec3 gt(grad_row[9], grad_row[10], grad_row[11]);
  Twist tau;
  tau.head<3>() = gt;
  tau.tail<3>() =
      axial(gr * pose.rotation().transpose()) + pose.translation().cross(gt);
  return tau;
}

// Right inverse of extract_tangent_grad: produces a value gradient whose
// tangent extraction at the same pose returns tau.
inline void pack_tangent_grad(const Twist& tau, const SE3& pose,
                              double* grad_row) {
  const Vec3 v = tau.tail<3>() - pose.translation().cross(tau.head<3>());
  const Mat3 gr = 0.5 * hat(v) * pose.rotation();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) grad_row[i * 3 + j] = gr(i, j);
  grad_row[9] = tau[0];
  grad_row[10] = tau[1];
  grad_row[11] = tau[2];
}

}  // namespace rodo
