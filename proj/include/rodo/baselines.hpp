#pragma once

#include <vector>

#include "rodo/evaluation.hpp"
#include "rodo/point_cloud.hpp"

namespace rodo {

struct IcpConfig {
  int max_iterations = 30;
  double tolerance = 1e-8;    // stop when ||Log(T_new T^-1)|| drops below
  double max_distance = 2.0;  // correspondence gate [m]
};

// Closed-form least-squares rigid alignment of paired points (orthogonal
// Procrustes via SVD with a reflection guard). Throws Degenerate for fewer
// than 3 pairs or a rank-deficient (collinear) cross-covariance.
SE3 procrustes_align(const std::vector<Vec3>& source,
                     const std::vector<Vec3>& target);

// Point-to-point ICP: nearest-neighbour correspondences inside the gate,
// then the closed-form alignment, repeated until the pose update stalls.
// Returns the pose mapping source coordinates onto the target frame.
// cost_history, when given, receives the gated squared-distance sum at each
// iteration's correspondences (non-increasing).
SE3 icp_point2point(const PointCloud& source, const PointCloud& target,
                    const SE3& init, const IcpConfig& cfg = {},
                    std::vector<double>* cost_history = nullptr);

// Frame-to-frame ICP odometry: chains relative estimates into world->sensor
// poses, seeding each pair with the previous relative motion. Needs at
// least two frames (InsufficientFrames).
Trajectory icp_odometry(const std::vector<PointCloud>& frames,
                        const IcpConfig& cfg = {});

}  // namespace rodo
