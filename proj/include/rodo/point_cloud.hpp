#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "rodo/lie.hpp"

namespace rodo {

// Sparse radar frame: 3D points plus optional per-point attributes.
// After preprocess() a frame holds exactly kFrameSize points with heights
// inside [kMinHeight, kMaxHeight].
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;        // empty or size() == points.size()
  std::vector<double> radial_velocity;  // empty or size() == points.size()
  int frame_id = 0;

  std::size_t size() const { return points.size(); }
  bool has_attributes() const { return !intensity.empty(); }
};

inline constexpr int kFrameSize = 512;
inline constexpr double kMinHeight = -2.0;
inline constexpr double kMaxHeight = 10.0;

// k-NN / ball-query result. Row-major indices/distances, each row sorted by
// ascending distance (ties by index).
struct NeighborIndex {
  int rows = 0;
  int k = 0;
  std::vector<int> indices;       // rows * k
  std::vector<double> distances;  // rows * k
  // Rows where a ball query found nothing inside the radius and fell back to
  // the single nearest neighbor.
  std::vector<uint8_t> fallback;  // empty for knn; size rows for ball_query

  int index(int row, int col) const { return indices[row * k + col]; }
  double distance(int row, int col) const { return distances[row * k + col]; }
};

// Greedy max-min farthest point sampling, deterministic from seed_index.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int count,
                                       int seed_index);

// Exact k nearest Euclidean neighbors of each query point among target
// points; ties broken toward the lower target index.
NeighborIndex knn(const PointCloud& query, const PointCloud& target, int k);
NeighborIndex knn(const std::vector<Vec3>& query, const std::vector<Vec3>& target,
                  int k);

// Up to max_samples target points within radius of each query point, sorted
// by (distance, index); short rows are padded by repeating the nearest found
// index. An empty ball falls back to the single nearest neighbor and sets
// the row's fallback flag.
NeighborIndex ball_query(const PointCloud& query, const PointCloud& target,
                         double radius, int max_samples);

// Height filter to [kMinHeight, kMaxHeight], then seeded random down-sample
// or repeat-pad to exactly kFrameSize points.
PointCloud preprocess(const PointCloud& cloud, uint64_t seed);

// Applies R p + t to every point; attributes and frame id are carried over.
PointCloud act(const SE3& pose, const PointCloud& cloud);

// Applies the same random rigid transform to the points and composes it into
// the ground-truth pose, preserving relative supervision.
struct AugmentOptions {
  double max_rotation_rad = 0.2;
  double max_translation_m = 0.5;
};
std::pair<PointCloud, SE3> random_rigid_augment(const PointCloud& cloud,
                                                const SE3& gt_pose,
                                                std::mt19937_64& rng,
                                                const AugmentOptions& opts = {});

}  // namespace rodo
