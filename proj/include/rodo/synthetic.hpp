#pragma once

#include <string>
#include <vector>

#include "rodo/point_cloud.hpp"

namespace rodo {

// Parameters for a desk-scale synthetic radar scene: a corridor of planar
// structure (ground + walls) with box clusters and uniform clutter, traversed
// by a simple trajectory.
struct SceneSpec {
  uint64_t seed = 1;
  int frames = 20;
  std::string trajectory = "straight";  // stationary | straight | arc
  double step_m = 0.3;        // forward step per frame
  double accel_m = 0.0;       // per-frame step increment
  double yaw_rate_deg = 0.0;  // per-frame heading change
  double noise_sigma = 0.02;  // meters
  double dynamic_fraction = 0.0;
};

struct SyntheticScene {
  std::vector<Vec3> world_points;
  std::vector<double> base_intensity;
  // Object id per point: -1 for static structure, otherwise an index into
  // object_velocity; moving objects translate by their velocity each frame.
  std::vector<int> object_id;
  std::vector<Vec3> object_velocity;  // m/frame, zero for static objects
  std::vector<SE3> trajectory;        // ground truth, world -> sensor
  double noise_sigma = 0.0;
  double dynamic_fraction = 0.0;
  uint64_t rng_seed = 0;
};

SyntheticScene make_scene(const SceneSpec& spec);

struct SynthFrame {
  PointCloud cloud;  // sensor frame, kFrameSize points with attributes
  SE3 gt_pose;       // world -> sensor
};

// Renders radar-like frames along the scene trajectory: visible world points
// sampled to kFrameSize, Gaussian position noise, per-point intensity and
// radial velocity. Deterministic per scene seed.
std::vector<SynthFrame> synth_sequence(const SyntheticScene& scene, int frames);

}  // namespace rodo
