#include <filesystem>
#include <random>

#include "doctest.h"
#include "rodo/dataset_io.hpp"
#include "rodo/errors.hpp"
#include "rodo/synthetic.hpp"

using namespace rodo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  const fs::path p = fs::temp_directory_path() / (std::string("rodo_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("stationary noise-free scene renders identical consecutive clouds") {
  SceneSpec spec;
  spec.trajectory = "stationary";
  spec.noise_sigma = 0.0;
  spec.dynamic_fraction = 0.0;
  spec.frames = 5;
  const auto frames = synth_sequence(make_scene(spec), 5);
  REQUIRE(frames.size() == 5);
  for (std::size_t f = 1; f < frames.size(); ++f) {
    CHECK((frames[f].gt_pose * frames[f - 1].gt_pose.inverse()).log().norm() ==
          0.0);
    for (std::size_t i = 0; i < kFrameSize; ++i)
      CHECK((frames[f].cloud.points[i] - frames[0].cloud.points[i]).norm() ==
            0.0);
  }
  // Static world seen by a static sensor: zero radial velocity everywhere.
  for (double vr : frames[0].cloud.radial_velocity) CHECK(vr == 0.0);
}

TEST_CASE("straight trajectory steps by exactly the configured stride") {
  SceneSpec spec;
  spec.step_m = 0.5;
  spec.frames = 10;
  const auto frames = synth_sequence(make_scene(spec), 10);
  for (std::size_t f = 1; f < frames.size(); ++f) {
    const SE3 rel = frames[f].gt_pose * frames[f - 1].gt_pose.inverse();
    CHECK(rel.translation().norm() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK((rel.rotation() - Mat3::Identity()).norm() < 1e-12);
  }
  // Closing speeds never exceed the ego speed.
  for (double vr : frames[3].cloud.radial_velocity)
    CHECK(std::abs(vr) <= 0.5 + 1e-9);
}

TEST_CASE("arc trajectory turns by the configured rate") {
  SceneSpec spec;
  spec.trajectory = "arc";
  spec.step_m = 0.4;
  spec.yaw_rate_deg = 3.0;
  spec.frames = 12;
  const auto scene = make_scene(spec);
  for (std::size_t f = 1; f < scene.trajectory.size(); ++f) {
    const SE3 rel = scene.trajectory[f] * scene.trajectory[f - 1].inverse();
    const double angle = so3_log(rel.rotation()).norm();
    CHECK(angle == doctest::Approx(3.0 * M_PI / 180.0).epsilon(1e-9));
  }
}

TEST_CASE("same seed renders bit-identical sequences") {
  SceneSpec spec;
  spec.seed = 99;
  spec.noise_sigma = 0.03;
  spec.dynamic_fraction = 0.2;
  spec.frames = 6;
  const auto a = synth_sequence(make_scene(spec), 6);
  const auto b = synth_sequence(make_scene(spec), 6);
  for (std::size_t f = 0; f < a.size(); ++f)
    for (std::size_t i = 0; i < kFrameSize; ++i) {
      CHECK(a[f].cloud.points[i] == b[f].cloud.points[i]);
      CHECK(a[f].cloud.radial_velocity[i] == b[f].cloud.radial_velocity[i]);
    }
}

TEST_CASE("dynamic fraction moves some points between frames") {
  SceneSpec spec;
  spec.trajectory = "stationary";
  spec.noise_sigma = 0.0;
  spec.dynamic_fraction = 0.2;
  spec.frames = 4;
  const auto scene = make_scene(spec);
  std::size_t moving = 0;
  for (std::size_t i = 0; i < scene.world_points.size(); ++i)
    if (scene.object_id[i] >= 0 &&
        scene.object_velocity[scene.object_id[i]].norm() > 0)
      ++moving;
  const double frac =
      static_cast<double>(moving) / static_cast<double>(scene.world_points.size());
  CHECK(frac >= 0.15);
  CHECK(frac <= 0.3);
}

TEST_CASE("frame files round trip in binary and csv") {
  SceneSpec spec;
  spec.frames = 2;
  const auto frames = synth_sequence(make_scene(spec), 2);
  const fs::path dir = temp_dir("frames");
  for (const char* name : {"f.bin", "f.csv"}) {
    save_frame(dir / name, frames[0].cloud);
    const PointCloud back = load_frame(dir / name);
    REQUIRE(back.size() == kFrameSize);
    for (std::size_t i = 0; i < kFrameSize; ++i) {
      // Storage quantizes to float32.
      CHECK((back.points[i] - frames[0].cloud.points[i]).norm() < 1e-5);
      CHECK(back.intensity[i] ==
            doctest::Approx(frames[0].cloud.intensity[i]).epsilon(1e-5));
    }
    // A second pass through storage is exact.
    save_frame(dir / "again.bin", back);
    const PointCloud twice = load_frame(dir / "again.bin");
    for (std::size_t i = 0; i < kFrameSize; ++i)
      CHECK((twice.points[i] - back.points[i]).norm() == 0.0);
  }
}

TEST_CASE("dataset directory round trips") {
  SceneSpec spec;
  spec.frames = 4;
  spec.seed = 3;
  const auto frames = synth_sequence(make_scene(spec), 4);
  const fs::path dir = temp_dir("dataset");
  save_dataset(dir, frames, "{}");
  const Dataset data = load_dataset(dir);
  REQUIRE(data.clouds.size() == 4);
  REQUIRE(data.gt.size() == 4);
  for (std::size_t f = 0; f < 4; ++f) {
    CHECK(data.clouds[f].frame_id == static_cast<int>(f));
    CHECK((data.gt[f] * frames[f].gt_pose.inverse()).log().norm() < 1e-12);
    for (std::size_t i = 0; i < kFrameSize; ++i)
      CHECK((data.clouds[f].points[i] - frames[f].cloud.points[i]).norm() <
            1e-5);
  }
}

TEST_CASE("trajectory files store sensor-to-world rows losslessly") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<SE3> poses;
  for (int i = 0; i < 8; ++i) {
    Twist xi;
    for (int k = 0; k < 6; ++k) xi(k) = u(rng) * (k < 3 ? 5.0 : 0.5);
    poses.push_back(SE3::exp(xi));
  }
  const fs::path dir = temp_dir("traj");
  save_trajectory(dir / "t.txt", poses);
  const auto back = load_trajectory(dir / "t.txt");
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i)
    CHECK((back[i] * poses[i].inverse()).log().norm() < 1e-12);

  // First row of the file is the sensor-to-world matrix, not the internal
  // world-to-sensor convention.
  const std::string text = read_text_file(dir / "t.txt");
  std::istringstream first_line(text.substr(0, text.find('\n')));
  Mat4 m = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) first_line >> m(r, c);
  CHECK((m - poses[0].inverse().matrix()).norm() < 1e-12);
}

TEST_CASE("degenerate scene requests are rejected") {
  SceneSpec spec;
  spec.frames = 1;
  CHECK_THROWS_AS((void)make_scene(spec), InsufficientFrames);
  SceneSpec ok;
  ok.frames = 3;
  CHECK_THROWS_AS((void)synth_sequence(make_scene(ok), 5), InsufficientFrames);
  SceneSpec bad;
  bad.dynamic_fraction = 1.5;
  CHECK_THROWS_AS((void)make_scene(bad), Error);
}
