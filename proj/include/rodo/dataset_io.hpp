#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rodo/point_cloud.hpp"
#include "rodo/synthetic.hpp"

namespace rodo {

// On-disk frame record layout: little-endian float32
// (x, y, z, intensity, radial_velocity), one record per point. A ".csv"
// extension switches to text with the matching header.
void save_frame(const std::filesystem::path& file, const PointCloud& cloud);
PointCloud load_frame(const std::filesystem::path& file);

// Dataset directory layout: frames/NNNNNN.bin listed by index.txt, optional
// gt_traj.txt, manifest.json with generation parameters.
void save_dataset(const std::filesystem::path& dir,
                  const std::vector<SynthFrame>& frames,
                  const std::string& manifest_json);
struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<SE3> gt;  // world -> sensor; empty when no ground truth on disk
};
Dataset load_dataset(const std::filesystem::path& dir);

// Trajectory files: one pose per line, 12 numbers, the row-major top 3x4 of
// the sensor-to-world matrix (internal poses map world -> sensor, so I/O
// inverts).
void save_trajectory(const std::filesystem::path& file,
                     const std::vector<SE3>& poses);
std::vector<SE3> load_trajectory(const std::filesystem::path& file);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file,
                     const std::string& text);

}  // namespace rodo
