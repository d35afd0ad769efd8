#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rodo/lie.hpp"
#include "rodo/pose_tensor.hpp"
#include "rodo/tensor.hpp"

namespace rodo {

// Sum over frames of || Log(ref^-1 est) ||^2. estimate is a (F, 12) pose
// tensor; the backward pass is the analytic tangent gradient
// 2 Adj(ref^-1)^T J_l(e)^-T e mapped back to a value gradient.
// Throws LengthMismatch when the frame counts differ.
Tensor pose_loss(const Tensor& estimate, const std::vector<SE3>& reference);

// Ordered odometry result. Poses map world -> sensor; positions are the
// sensor origins in the world frame.
struct Trajectory {
  std::vector<int> frame_ids;
  std::vector<SE3> poses;

  int size() const { return static_cast<int>(poses.size()); }
  Vec3 position(int i) const {
    return -(poses[i].rotation().transpose() * poses[i].translation());
  }
  // Cumulative travelled distance per frame, starting at 0; non-decreasing.
  std::vector<double> path_lengths() const;
};

// Wraps a pose list with sequential frame ids 0..n-1.
Trajectory make_trajectory(const std::vector<SE3>& poses);

// Scalar trajectory loss; requires matching frame ids (LengthMismatch).
double pose_loss(const Trajectory& predicted, const Trajectory& truth);

// Relative-error protocol over all subsequences whose ground-truth path
// first exceeds each evaluation length.
enum class MetricMode {
  kVod,   // lengths 20..160 m, reported as m/m and deg/m
  kLong,  // lengths 100..800 m, reported as % and deg/100m
};
std::vector<double> metric_lengths(MetricMode mode);

struct LengthBucket {
  double length = 0.0;  // nominal subsequence length [m]
  double t_rmse = 0.0;  // translational RMSE, m/m
  double r_rmse = 0.0;  // rotational RMSE, deg/m
  int count = 0;        // subsequences evaluated
};

struct MetricReport {
  double t_rel = 0.0;  // mean of per-length translational RMSE, in t_unit
  double r_rel = 0.0;  // mean of per-length rotational RMSE, in r_unit
  std::string t_unit;  // "m/m" or "%"
  std::string r_unit;  // "deg/m" or "deg/100m"
  std::vector<LengthBucket> per_length;  // always m/m and deg/m
  int subsequences = 0;

  std::string table() const;  // human-readable summary
  std::string json() const;
};

// For every start frame and length L, the end frame is the first whose
// ground-truth path length exceeds L; the error is the relative-pose
// discrepancy dT = (rel_truth)^-1 rel_pred, translational ||trans(dT)||/L
// and rotational angle(dT)/L (trace formula, clamped). Per-length RMSE over
// subsequences, then means over lengths. Throws LengthMismatch on id
// mismatch and TrajectoryTooShort when the shortest length yields no
// subsequence.
MetricReport kitti_metrics(const Trajectory& predicted,
                           const Trajectory& truth,
                           const std::vector<double>& lengths,
                           MetricMode unit_mode = MetricMode::kVod);
MetricReport kitti_metrics(const Trajectory& predicted,
                           const Trajectory& truth, MetricMode mode);

// Plot-data export: one frame_id,x,y,z CSV per named trajectory plus a
// combined CSV (header only when the list is empty) and a deterministic
// top-down SVG overlay with one polyline per trajectory.
struct NamedTrajectory {
  std::string name;
  Trajectory trajectory;
};
void export_plot_data(const std::filesystem::path& dir,
                      const std::vector<NamedTrajectory>& trajectories);

}  // namespace rodo
