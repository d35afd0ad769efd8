#include "rodo/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rodo/errors.hpp"

namespace rodo {

namespace {

Mat3 yaw_rotation(double yaw) {
  Mat3 r;
  r << std::cos(yaw), -std::sin(yaw), 0.0, std::sin(yaw), std::cos(yaw), 0.0,
      0.0, 0.0, 1.0;
  return r;
}

// world -> sensor pose for a sensor at world position s with heading yaw.
SE3 pose_from_state(const Vec3& s, double yaw) {
  const Mat3 r_ws = yaw_rotation(yaw);  // sensor -> world
  const Mat3 r = r_ws.transpose();
  return SE3(r, -r * s);
}

// splitmix64 finalizer; gives every world point a fixed seeded priority.
uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SyntheticScene make_scene(const SceneSpec& spec) {
  if (spec.frames < 2) throw InsufficientFrames("scene needs >= 2 frames");
  if (spec.dynamic_fraction < 0.0 || spec.dynamic_fraction >= 1.0)
    throw Error("dynamic_fraction must be in [0, 1)");

  SyntheticScene scene;
  scene.noise_sigma = spec.noise_sigma;
  scene.dynamic_fraction = spec.dynamic_fraction;
  scene.rng_seed = spec.seed;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto jitter = [&](double amp) { return (unit(rng) * 2.0 - 1.0) * amp; };

  auto push = [&](const Vec3& p, double intensity, int object) {
    scene.world_points.push_back(p);
    scene.base_intensity.push_back(intensity);
    scene.object_id.push_back(object);
  };

  // Ground plane slightly below the sensor.
  for (double x = -12.0; x <= 70.0; x += 1.5)
    for (double y = -14.0; y <= 14.0; y += 1.5)
      push(Vec3(x + jitter(0.3), y + jitter(0.3), -0.6 + jitter(0.05)),
           0.25 + 0.1 * unit(rng), -1);

  // Two walls bounding the corridor.
  for (double side : {-12.0, 12.0})
    for (double x = -12.0; x <= 70.0; x += 1.2)
      for (double z = -0.3; z <= 3.4; z += 0.9)
        push(Vec3(x + jitter(0.2), side + jitter(0.1), z + jitter(0.2)),
             0.6 + 0.2 * unit(rng), -1);

  // Box clusters scattered along the corridor; these are the candidates for
  // per-object motion.
  const int boxes = 10;
  std::vector<std::size_t> box_start(boxes), box_count(boxes);
  for (int b = 0; b < boxes; ++b) {
    const Vec3 c(2.0 + 60.0 * unit(rng), -9.0 + 18.0 * unit(rng),
                 0.2 + 0.8 * unit(rng));
    const double lx = 1.2 + 1.8 * unit(rng);
    const double ly = 1.0 + 1.2 * unit(rng);
    const double lz = 0.8 + 1.2 * unit(rng);
    const double glow = 0.7 + 0.25 * unit(rng);
    box_start[b] = scene.world_points.size();
    for (double u = -0.5; u <= 0.5; u += 0.25)
      for (double v = -0.5; v <= 0.5; v += 0.25)
        for (double w : {-0.5, 0.5}) {
          push(c + Vec3(u * lx + jitter(0.04), v * ly + jitter(0.04),
                        w * lz + jitter(0.04)),
               glow, b);
          push(c + Vec3(u * lx + jitter(0.04), w * ly + jitter(0.04),
                        v * lz + jitter(0.04)),
               glow, b);
        }
    box_count[b] = scene.world_points.size() - box_start[b];
  }

  // Sparse clutter.
  const std::size_t clutter = scene.world_points.size() / 18;
  for (std::size_t i = 0; i < clutter; ++i)
    push(Vec3(-12.0 + 82.0 * unit(rng), -14.0 + 28.0 * unit(rng),
              -1.0 + 6.0 * unit(rng)),
         0.1 + 0.5 * unit(rng), -1);

  // Assign velocities; boxes become dynamic until the requested fraction of
  // points is covered.
  scene.object_velocity.assign(boxes, Vec3::Zero());
  const auto total = static_cast<double>(scene.world_points.size());
  std::size_t moving = 0;
  for (int b = 0; b < boxes; ++b) {
    if (static_cast<double>(moving) >= spec.dynamic_fraction * total) break;
    if (spec.dynamic_fraction <= 0.0) break;
    const double heading = unit(rng) * 2.0 * M_PI;
    const double speed = 0.15 + 0.25 * unit(rng);
    scene.object_velocity[b] =
        Vec3(std::cos(heading) * speed, std::sin(heading) * speed, 0.0);
    moving += box_count[b];
  }

  // Trajectory: sensor starts at the origin heading +x.
  Vec3 s = Vec3::Zero();
  double yaw = 0.0;
  double step = spec.step_m;
  const double yaw_rate = spec.yaw_rate_deg * M_PI / 180.0;
  for (int f = 0; f < spec.frames; ++f) {
    scene.trajectory.push_back(pose_from_state(s, yaw));
    if (spec.trajectory == "stationary") continue;
    if (spec.trajectory != "straight" && spec.trajectory != "arc")
      throw Error("unknown trajectory kind: " + spec.trajectory);
    s += yaw_rotation(yaw).col(0) * step;
    step += spec.accel_m;
    if (spec.trajectory == "arc") yaw += yaw_rate;
  }
  return scene;
}

std::vector<SynthFrame> synth_sequence(const SyntheticScene& scene,
                                       int frames) {
  if (frames < 2) throw InsufficientFrames("need >= 2 frames");
  if (static_cast<std::size_t>(frames) > scene.trajectory.size())
    throw InsufficientFrames("scene trajectory shorter than request");

  std::vector<SynthFrame> out;
  out.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    const SE3& pose = scene.trajectory[f];
    // Ego velocity in m/frame from the trajectory itself (one-sided at the
    // last frame) so radial velocities stay consistent with the motion.
    const Vec3 here = pose.inverse().translation();
    Vec3 ego = Vec3::Zero();
    if (f + 1 < static_cast<int>(scene.trajectory.size()))
      ego = scene.trajectory[f + 1].inverse().translation() - here;
    else if (f > 0)
      ego = here - scene.trajectory[f - 1].inverse().translation();

    // Each frame reseeds identically: a static scene under a stationary
    // trajectory renders bit-identical clouds.
    std::mt19937_64 rng(scene.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::size_t> visible;
    std::vector<Vec3> world_now;
    for (std::size_t i = 0; i < scene.world_points.size(); ++i) {
      Vec3 w = scene.world_points[i];
      if (scene.object_id[i] >= 0)
        w += scene.object_velocity[scene.object_id[i]] * static_cast<double>(f);
      const Vec3 local = pose * w;
      if (local.x() < 0.5 || local.x() > 45.0) continue;
      if (std::abs(local.y()) > 26.0) continue;
      if (local.z() < kMinHeight + 0.2 || local.z() > kMaxHeight - 0.2)
        continue;
      visible.push_back(i);
      world_now.push_back(w);
    }
    if (visible.size() < kFrameSize)
      throw EmptyAfterFilter("scene too sparse at frame " + std::to_string(f));

    // Every world point carries a fixed seeded priority and each frame keeps
    // the kFrameSize visible points with the smallest ones. Reflectors thus
    // persist across frames while the field of view slides, like physical
    // radar returns; turnover happens only at the visibility boundary.
    std::vector<std::size_t> order(visible.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return mix64(scene.rng_seed ^ visible[a]) <
             mix64(scene.rng_seed ^ visible[b]);
    });

    SynthFrame frame;
    frame.gt_pose = pose;
    frame.cloud.frame_id = f;
    frame.cloud.points.reserve(kFrameSize);
    frame.cloud.intensity.reserve(kFrameSize);
    frame.cloud.radial_velocity.reserve(kFrameSize);
    for (std::size_t i = 0; i < kFrameSize; ++i) {
      const std::size_t idx = visible[order[i]];
      const Vec3& w = world_now[order[i]];
      Vec3 local = pose * w;
      local += Vec3(gauss(rng), gauss(rng), gauss(rng)) * scene.noise_sigma;
      frame.cloud.points.push_back(local);
      frame.cloud.intensity.push_back(scene.base_intensity[idx] +
                                      0.02 * (unit(rng) - 0.5));
      // Relative radial velocity along the ray, as a radar would report.
      Vec3 target_vel = Vec3::Zero();
      if (scene.object_id[idx] >= 0)
        target_vel = scene.object_velocity[scene.object_id[idx]];
      const Vec3 ray = w - here;
      const double range = ray.norm();
      double vr = 0.0;
      if (range > 1e-9) vr = (target_vel - ego).dot(ray / range);
      frame.cloud.radial_velocity.push_back(vr);
    }
    out.push_back(std::move(frame));
  }
  return out;
}

}  // namespace rodo
