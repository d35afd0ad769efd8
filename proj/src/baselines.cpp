#include "rodo/baselines.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "rodo/errors.hpp"

namespace rodo {

SE3 procrustes_align(const std::vector<Vec3>& source,
                     const std::vector<Vec3>& target) {
  if (source.size() != target.size())
    throw ShapeMismatch("procrustes_align: pair counts differ");
  const int n = static_cast<int>(source.size());
  if (n < 3) throw Degenerate("rigid alignment needs at least 3 pairs");

  Vec3 src_mean = Vec3::Zero(), tgt_mean = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    src_mean += source[i];
    tgt_mean += target[i];
  }
  src_mean /= n;
  tgt_mean /= n;

  Mat3 cross = Mat3::Zero();
  for (int i = 0; i < n; ++i)
    cross += (source[i] - src_mean) * (target[i] - tgt_mean).transpose();

  Eigen::JacobiSVD<Mat3> svd(cross,
                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  // A collinear point set leaves the rotation about its axis free.
  if (s(1) <= 1e-9 * s(0) || s(0) == 0.0)
    throw Degenerate("rigid alignment is rank-deficient (collinear points)");

  Mat3 flip = Mat3::Identity();
  flip(2, 2) =
      (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0
                                                                      : 1.0;
  const Mat3 r = svd.matrixV() * flip * svd.matrixU().transpose();
  return SE3(r, tgt_mean - r * src_mean);
}

SE3 icp_point2point(const PointCloud& source, const PointCloud& target,
                    const SE3& init, const IcpConfig& cfg,
                    std::vector<double>* cost_history) {
  if (source.points.empty() || target.points.empty())
    throw Degenerate("icp needs non-empty clouds");
  if (cost_history) cost_history->clear();

  SE3 pose = init;
  const double gate_sq = cfg.max_distance * cfg.max_distance;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    std::vector<Vec3> moved;
    moved.reserve(source.points.size());
    for (const Vec3& p : source.points) moved.push_back(pose * p);
    const NeighborIndex nn = knn(moved, target.points, 1);

    std::vector<Vec3> src, tgt;
    double cost = 0.0;
    for (std::size_t i = 0; i < source.points.size(); ++i) {
      const double d = nn.distance(static_cast<int>(i), 0);
      if (d * d > gate_sq) continue;
      src.push_back(source.points[i]);
      tgt.push_back(target.points[nn.index(static_cast<int>(i), 0)]);
      cost += d * d;
    }
    if (cost_history) cost_history->push_back(cost);

    const SE3 refined = procrustes_align(src, tgt);
    const double step = (refined * pose.inverse()).log().norm();
    pose = refined;
    if (step < cfg.tolerance) break;
  }
  return pose;
}

Trajectory icp_odometry(const std::vector<PointCloud>& frames,
                        const IcpConfig& cfg) {
  if (frames.size() < 2)
    throw InsufficientFrames("icp odometry needs at least two frames");

  std::vector<SE3> poses{SE3()};
  SE3 prev_rel;  // linear motion model: repeat the last relative estimate
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const SE3 rel =
        icp_point2point(frames[k], frames[k + 1], prev_rel, cfg);
    poses.push_back(rel * poses.back());
    prev_rel = rel;
  }
  return make_trajectory(poses);
}

}  // namespace rodo
