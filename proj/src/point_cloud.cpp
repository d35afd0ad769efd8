#include "rodo/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rodo {

namespace {

// (distance, index) ordering used by all spatial queries.
struct Hit {
  double d2;
  int idx;
  bool operator<(const Hit& o) const {
    return d2 != o.d2 ? d2 < o.d2 : idx < o.idx;
  }
};

}  // namespace

std::vector<int> farthest_point_sample(const PointCloud& cloud, int count,
                                       int seed_index) {
  const int n = static_cast<int>(cloud.size());
  if (count < 1 || count > n) {
    throw CountTooLarge("farthest_point_sample: count outside [1, N]");
  }
  std::vector<int> selected;
  selected.reserve(count);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  int current = seed_index;
  for (int step = 0; step < count; ++step) {
    selected.push_back(current);
    const Vec3& p = cloud.points[current];
    int best = -1;
    double best_d2 = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d2 = (cloud.points[i] - p).squaredNorm();
      if (d2 < min_d2[i]) min_d2[i] = d2;
      // Deterministic tie-break toward the lower index.
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

NeighborIndex knn(const std::vector<Vec3>& query,
                  const std::vector<Vec3>& target, int k) {
  const int m = static_cast<int>(target.size());
  const int n = static_cast<int>(query.size());
  if (k < 1 || k > m) {
    throw KTooLarge("knn: k outside [1, |target|]");
  }
  NeighborIndex out;
  out.rows = n;
  out.k = k;
  out.indices.resize(static_cast<size_t>(n) * k);
  out.distances.resize(static_cast<size_t>(n) * k);
  std::vector<Hit> hits(m);
  for (int q = 0; q < n; ++q) {
    for (int i = 0; i < m; ++i) {
      hits[i] = Hit{(target[i] - query[q]).squaredNorm(), i};
    }
    std::partial_sort(hits.begin(), hits.begin() + k, hits.end());
    for (int j = 0; j < k; ++j) {
      out.indices[static_cast<size_t>(q) * k + j] = hits[j].idx;
      out.distances[static_cast<size_t>(q) * k + j] = std::sqrt(hits[j].d2);
    }
  }
  return out;
}

NeighborIndex knn(const PointCloud& query, const PointCloud& target, int k) {
  return knn(query.points, target.points, k);
}

NeighborIndex ball_query(const PointCloud& query, const PointCloud& target,
                         double radius, int max_samples) {
  const int m = static_cast<int>(target.size());
  const int n = static_cast<int>(query.size());
  if (radius <= 0.0) {
    throw Error("ball_query: radius must be positive");
  }
  max_samples = std::min(max_samples, m);
  NeighborIndex out;
  out.rows = n;
  out.k = max_samples;
  out.indices.resize(static_cast<size_t>(n) * max_samples);
  out.distances.resize(static_cast<size_t>(n) * max_samples);
  out.fallback.assign(n, 0);
  const double r2 = radius * radius;
  std::vector<Hit> hits;
  for (int q = 0; q < n; ++q) {
    hits.clear();
    int nearest = 0;
    double nearest_d2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      const double d2 = (target.points[i] - query.points[q]).squaredNorm();
      if (d2 <= r2) hits.push_back(Hit{d2, i});
      if (d2 < nearest_d2) {
        nearest_d2 = d2;
        nearest = i;
      }
    }
    if (hits.empty()) {
      hits.push_back(Hit{nearest_d2, nearest});
      out.fallback[q] = 1;
    }
    std::sort(hits.begin(), hits.end());
    if (static_cast<int>(hits.size()) > max_samples) hits.resize(max_samples);
    for (int j = 0; j < max_samples; ++j) {
      // Pad short rows with the nearest found index.
      const Hit& h = j < static_cast<int>(hits.size()) ? hits[j] : hits[0];
      out.indices[static_cast<size_t>(q) * max_samples + j] = h.idx;
      out.distances[static_cast<size_t>(q) * max_samples + j] = std::sqrt(h.d2);
    }
  }
  return out;
}

PointCloud preprocess(const PointCloud& cloud, uint64_t seed) {
  PointCloud filtered;
  filtered.frame_id = cloud.frame_id;
  const bool attrs = cloud.has_attributes();
  for (size_t i = 0; i < cloud.size(); ++i) {
    const double h = cloud.points[i].z();
    if (h < kMinHeight || h > kMaxHeight) continue;
    filtered.points.push_back(cloud.points[i]);
    if (attrs) {
      filtered.intensity.push_back(cloud.intensity[i]);
      filtered.radial_velocity.push_back(cloud.radial_velocity[i]);
    }
  }
  const int n = static_cast<int>(filtered.size());
  if (n == 0) {
    throw EmptyAfterFilter("preprocess: no points inside the height range");
  }

  std::vector<int> pick(kFrameSize);
  if (n >= kFrameSize) {
    // Seeded partial Fisher-Yates: uniform sample without replacement.
    std::mt19937_64 rng(seed);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < kFrameSize; ++i) {
      std::uniform_int_distribution<int> dist(i, n - 1);
      std::swap(perm[i], perm[dist(rng)]);
      pick[i] = perm[i];
    }
  } else {
    for (int i = 0; i < kFrameSize; ++i) pick[i] = i % n;
  }

  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.reserve(kFrameSize);
  for (int idx : pick) {
    out.points.push_back(filtered.points[idx]);
    if (attrs) {
      out.intensity.push_back(filtered.intensity[idx]);
      out.radial_velocity.push_back(filtered.radial_velocity[idx]);
    }
  }
  return out;
}

PointCloud act(const SE3& pose, const PointCloud& cloud) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = pose * p;
  return out;
}

std::pair<PointCloud, SE3> random_rigid_augment(const PointCloud& cloud,
                                                const SE3& gt_pose,
                                                std::mt19937_64& rng,
                                                const AugmentOptions& opts) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vec3 axis(unit(rng), unit(rng), unit(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
  axis.normalize();
  std::uniform_real_distribution<double> angle_dist(-opts.max_rotation_rad,
                                                    opts.max_rotation_rad);
  std::uniform_real_distribution<double> trans_dist(-opts.max_translation_m,
                                                    opts.max_translation_m);
  const Vec3 phi = axis * angle_dist(rng);
  const Vec3 t(trans_dist(rng), trans_dist(rng), trans_dist(rng));
  const SE3 g(so3_exp(phi), t);
  // Points live in the sensor frame, so the new world->sensor pose is g * T.
  return {act(g, cloud), g * gt_pose};
}

}  // namespace rodo
