#include "rodo/dataset_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rodo/errors.hpp"

namespace rodo {

namespace fs = std::filesystem;

namespace {

constexpr char kCsvHeader[] = "x,y,z,intensity,radial_velocity";

void save_frame_csv(const fs::path& file, const PointCloud& cloud) {
  std::ofstream out(file);
  if (!out) throw IoFailure("cannot open " + file.string());
  out << kCsvHeader << "\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const double it = cloud.has_attributes() ? cloud.intensity[i] : 0.0;
    const double vr = cloud.has_attributes() ? cloud.radial_velocity[i] : 0.0;
    out << static_cast<float>(p.x()) << "," << static_cast<float>(p.y()) << ","
        << static_cast<float>(p.z()) << "," << static_cast<float>(it) << ","
        << static_cast<float>(vr) << "\n";
  }
  if (!out) throw IoFailure("write failed: " + file.string());
}

PointCloud load_frame_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoFailure("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(kCsvHeader, 0) != 0)
    throw IoFailure("bad csv header in " + file.string());
  PointCloud cloud;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double v[5];
    char comma;
    for (int j = 0; j < 5; ++j) {
      if (!(row >> v[j])) throw IoFailure("bad csv row in " + file.string());
      if (j < 4) row >> comma;
    }
    // The format is float32; quantize so csv and binary agree exactly.
    cloud.points.emplace_back(static_cast<float>(v[0]),
                              static_cast<float>(v[1]),
                              static_cast<float>(v[2]));
    cloud.intensity.push_back(static_cast<float>(v[3]));
    cloud.radial_velocity.push_back(static_cast<float>(v[4]));
  }
  if (cloud.points.empty()) throw IoFailure("empty frame: " + file.string());
  return cloud;
}

}  // namespace

void save_frame(const fs::path& file, const PointCloud& cloud) {
  if (file.extension() == ".csv") return save_frame_csv(file, cloud);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + file.string());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    float rec[5] = {static_cast<float>(cloud.points[i].x()),
                    static_cast<float>(cloud.points[i].y()),
                    static_cast<float>(cloud.points[i].z()),
                    cloud.has_attributes()
                        ? static_cast<float>(cloud.intensity[i])
                        : 0.0f,
                    cloud.has_attributes()
                        ? static_cast<float>(cloud.radial_velocity[i])
                        : 0.0f};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!out) throw IoFailure("write failed: " + file.string());
}

PointCloud load_frame(const fs::path& file) {
  if (file.extension() == ".csv") return load_frame_csv(file);
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw IoFailure("cannot open " + file.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes == 0 || bytes % (5 * sizeof(float)) != 0)
    throw IoFailure("bad frame size: " + file.string());
  in.seekg(0);
  PointCloud cloud;
  const std::size_t n = bytes / (5 * sizeof(float));
  for (std::size_t i = 0; i < n; ++i) {
    float rec[5];
    in.read(reinterpret_cast<char*>(rec), sizeof(rec));
    cloud.points.emplace_back(rec[0], rec[1], rec[2]);
    cloud.intensity.push_back(rec[3]);
    cloud.radial_velocity.push_back(rec[4]);
  }
  if (!in) throw IoFailure("read failed: " + file.string());
  return cloud;
}

void save_dataset(const fs::path& dir, const std::vector<SynthFrame>& frames,
                  const std::string& manifest_json) {
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  if (ec) throw IoFailure("cannot create " + dir.string());
  std::ostringstream index;
  std::vector<SE3> gt;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".bin";
    save_frame(dir / "frames" / name.str(), frames[i].cloud);
    index << "frames/" << name.str() << "\n";
    gt.push_back(frames[i].gt_pose);
  }
  write_text_file(dir / "index.txt", index.str());
  save_trajectory(dir / "gt_traj.txt", gt);
  write_text_file(dir / "manifest.json", manifest_json);
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream index(dir / "index.txt");
  if (!index) throw IoFailure("missing index.txt in " + dir.string());
  Dataset data;
  std::string line;
  int id = 0;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    PointCloud cloud = load_frame(dir / line);
    cloud.frame_id = id++;
    data.clouds.push_back(std::move(cloud));
  }
  if (data.clouds.empty()) throw IoFailure("empty dataset: " + dir.string());
  if (fs::exists(dir / "gt_traj.txt")) {
    data.gt = load_trajectory(dir / "gt_traj.txt");
    if (data.gt.size() != data.clouds.size())
      throw LengthMismatch("gt_traj.txt does not match index.txt");
  }
  return data;
}

void save_trajectory(const fs::path& file, const std::vector<SE3>& poses) {
  std::ofstream out(file);
  if (!out) throw IoFailure("cannot open " + file.string());
  out << std::setprecision(17);
  for (const SE3& pose : poses) {
    const Mat4 m = pose.inverse().matrix();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        out << m(r, c) << (r == 2 && c == 3 ? "" : " ");
    out << "\n";
  }
  if (!out) throw IoFailure("write failed: " + file.string());
}

std::vector<SE3> load_trajectory(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoFailure("cannot open " + file.string());
  std::vector<SE3> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Mat4 m = Mat4::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        if (!(row >> m(r, c)))
          throw IoFailure("bad trajectory row in " + file.string());
    poses.push_back(SE3::from_matrix(m).inverse());
  }
  return poses;
}

std::string read_text_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + file.string());
  out << text;
  if (!out) throw IoFailure("write failed: " + file.string());
}

}  // namespace rodo
