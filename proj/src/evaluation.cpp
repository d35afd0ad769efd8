#include "rodo/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rodo/ops.hpp"

namespace rodo {

Tensor pose_loss(const Tensor& estimate, const std::vector<SE3>& reference) {
  const int frames = static_cast<int>(reference.size());
  if (estimate.ndim() != 2 || estimate.dim(0) != frames ||
      estimate.dim(1) != 12)
    throw LengthMismatch("pose_loss: estimate/reference frame counts differ");

  const std::vector<SE3> est = poses_from_state(estimate);
  double loss = 0.0;
  std::vector<Twist> errors(frames);
  for (int f = 0; f < frames; ++f) {
    errors[f] = (reference[f].inverse() * est[f]).log();
    loss += errors[f].squaredNorm();
  }

  std::vector<Mat6> adj_ref(frames);
  for (int f = 0; f < frames; ++f)
    adj_ref[f] = reference[f].inverse().adjoint();
  return custom_node(
      {estimate}, {1}, Array::Constant(1, loss),
      [est, errors, adj_ref, frames](const Array& gout) {
        Array gpose = Array::Zero(frames * 12);
        for (int f = 0; f < frames; ++f) {
          const Mat6 jl = se3_left_jacobian(errors[f]);
          const Twist tau = 2.0 * gout[0] * adj_ref[f].transpose() *
                            jl.transpose().partialPivLu().solve(errors[f]);
          pack_tangent_grad(tau, est[f], gpose.data() + 12 * f);
        }
        return std::vector<Array>{gpose};
      });
}

std::vector<double> Trajectory::path_lengths() const {
  std::vector<double> cum(poses.size(), 0.0);
  for (std::size_t i = 1; i < poses.size(); ++i)
    cum[i] = cum[i - 1] + (position(static_cast<int>(i)) -
                           position(static_cast<int>(i) - 1))
                              .norm();
  return cum;
}

Trajectory make_trajectory(const std::vector<SE3>& poses) {
  Trajectory t;
  t.poses = poses;
  for (int i = 0; i < static_cast<int>(poses.size()); ++i)
    t.frame_ids.push_back(i);
  return t;
}

double pose_loss(const Trajectory& predicted, const Trajectory& truth) {
  if (predicted.size() != truth.size() ||
      predicted.frame_ids != truth.frame_ids)
    throw LengthMismatch("pose_loss: trajectories disagree on frame ids");
  double loss = 0.0;
  for (int i = 0; i < truth.size(); ++i)
    loss += (truth.poses[i].inverse() * predicted.poses[i]).log().squaredNorm();
  return loss;
}

std::vector<double> metric_lengths(MetricMode mode) {
  std::vector<double> lengths;
  if (mode == MetricMode::kVod)
    for (int l = 20; l <= 160; l += 20) lengths.push_back(l);
  else
    for (int l = 100; l <= 800; l += 100) lengths.push_back(l);
  return lengths;
}

namespace {

double rotation_angle(const Mat3& r) {
  const double arg = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::acos(arg);
}

}  // namespace

MetricReport kitti_metrics(const Trajectory& predicted,
                           const Trajectory& truth,
                           const std::vector<double>& lengths,
                           MetricMode unit_mode) {
  if (predicted.size() != truth.size() ||
      predicted.frame_ids != truth.frame_ids)
    throw LengthMismatch("kitti_metrics: trajectories disagree on frame ids");

  const int n = truth.size();
  const std::vector<double> dist = truth.path_lengths();

  MetricReport report;
  double t_sum = 0.0, r_sum = 0.0;
  int used_lengths = 0;
  for (double length : lengths) {
    LengthBucket bucket;
    bucket.length = length;
    double t_sq = 0.0, r_sq = 0.0;
    for (int start = 0; start < n; ++start) {
      int end = -1;
      for (int i = start + 1; i < n; ++i) {
        if (dist[i] - dist[start] > length) {
          end = i;
          break;
        }
      }
      if (end < 0) break;  // later starts have even less path left

      const SE3 rel_truth = truth.poses[end] * truth.poses[start].inverse();
      const SE3 rel_pred =
          predicted.poses[end] * predicted.poses[start].inverse();
      const SE3 dt = rel_truth.inverse() * rel_pred;
      // Normalize by the travelled ground-truth distance (>= the nominal
      // length by at most one frame step) so a uniform 1% drift reads
      // exactly 0.01 m/m regardless of frame spacing.
      const double travelled = dist[end] - dist[start];
      const double terr = dt.translation().norm() / travelled;
      const double rerr =
          rotation_angle(dt.rotation()) * (180.0 / M_PI) / travelled;
      t_sq += terr * terr;
      r_sq += rerr * rerr;
      ++bucket.count;
    }
    if (bucket.count == 0) continue;
    bucket.t_rmse = std::sqrt(t_sq / bucket.count);
    bucket.r_rmse = std::sqrt(r_sq / bucket.count);
    report.per_length.push_back(bucket);
    report.subsequences += bucket.count;
    t_sum += bucket.t_rmse;
    r_sum += bucket.r_rmse;
    ++used_lengths;
  }
  if (used_lengths == 0)
    throw TrajectoryTooShort(
        "no subsequence reaches the shortest evaluation length");

  report.t_rel = t_sum / used_lengths;
  report.r_rel = r_sum / used_lengths;
  if (unit_mode == MetricMode::kVod) {
    report.t_unit = "m/m";
    report.r_unit = "deg/m";
  } else {
    report.t_rel *= 100.0;  // percent
    report.r_rel *= 100.0;  // degrees per 100 m
    report.t_unit = "%";
    report.r_unit = "deg/100m";
  }
  return report;
}

MetricReport kitti_metrics(const Trajectory& predicted,
                           const Trajectory& truth, MetricMode mode) {
  return kitti_metrics(predicted, truth, metric_lengths(mode), mode);
}

std::string MetricReport::table() const {
  std::ostringstream os;
  os << "length_m  t_rmse[m/m]  r_rmse[deg/m]  count\n";
  char line[128];
  for (const LengthBucket& b : per_length) {
    std::snprintf(line, sizeof(line), "%8.0f  %11.6f  %13.6f  %5d\n",
                  b.length, b.t_rmse, b.r_rmse, b.count);
    os << line;
  }
  std::snprintf(line, sizeof(line), "mean      t_rel %.6f %s  r_rel %.6f %s\n",
                t_rel, t_unit.c_str(), r_rel, r_unit.c_str());
  os << line;
  return os.str();
}

std::string MetricReport::json() const {
  std::ostringstream os;
  os.precision(12);
  os << "{\"t_rel\":" << t_rel << ",\"r_rel\":" << r_rel << ",\"t_unit\":\""
     << t_unit << "\",\"r_unit\":\"" << r_unit
     << "\",\"subsequences\":" << subsequences << ",\"per_length\":[";
  for (std::size_t i = 0; i < per_length.size(); ++i) {
    const LengthBucket& b = per_length[i];
    if (i) os << ",";
    os << "{\"length\":" << b.length << ",\"t_rmse\":" << b.t_rmse
       << ",\"r_rmse\":" << b.r_rmse << ",\"count\":" << b.count << "}";
  }
  os << "]}";
  return os.str();
}

namespace {

// Fixed palette so the overlay bytes are reproducible.
const char* kPlotColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                             "#9467bd", "#ff7f0e", "#8c564b"};

std::string format_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void export_plot_data(const std::filesystem::path& dir,
                      const std::vector<NamedTrajectory>& trajectories) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  std::ofstream combined(dir / "trajectories.csv");
  if (!combined) throw IoFailure("cannot write " + dir.string());
  combined << "name,frame_id,x,y,z\n";
  for (const NamedTrajectory& nt : trajectories) {
    std::ofstream own(dir / (nt.name + ".csv"));
    if (!own) throw IoFailure("cannot write " + nt.name + ".csv");
    own << "frame_id,x,y,z\n";
    for (int i = 0; i < nt.trajectory.size(); ++i) {
      const Vec3 p = nt.trajectory.position(i);
      const std::string row = std::to_string(nt.trajectory.frame_ids[i]) +
                              "," + format_num(p.x()) + "," +
                              format_num(p.y()) + "," + format_num(p.z());
      own << row << "\n";
      combined << nt.name << "," << row << "\n";
    }
  }

  // Top-down overlay: world x right, world y up, shared bounds.
  double lo_x = 0.0, hi_x = 1.0, lo_y = 0.0, hi_y = 1.0;
  bool first = true;
  for (const NamedTrajectory& nt : trajectories) {
    for (int i = 0; i < nt.trajectory.size(); ++i) {
      const Vec3 p = nt.trajectory.position(i);
      if (first) {
        lo_x = hi_x = p.x();
        lo_y = hi_y = p.y();
        first = false;
      }
      lo_x = std::min(lo_x, p.x());
      hi_x = std::max(hi_x, p.x());
      lo_y = std::min(lo_y, p.y());
      hi_y = std::max(hi_y, p.y());
    }
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double size = 800.0, margin = 40.0;
  const double scale = (size - 2.0 * margin) / span;

  std::ofstream svg(dir / "trajectories.svg");
  if (!svg) throw IoFailure("cannot write trajectories.svg");
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" "
         "height=\"800\" viewBox=\"0 0 800 800\">\n";
  svg << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    const Trajectory& traj = trajectories[t].trajectory;
    svg << "<polyline fill=\"none\" stroke=\""
        << kPlotColors[t % (sizeof(kPlotColors) / sizeof(kPlotColors[0]))]
        << "\" stroke-width=\"2\" points=\"";
    for (int i = 0; i < traj.size(); ++i) {
      const Vec3 p = traj.position(i);
      if (i) svg << " ";
      svg << format_num(margin + (p.x() - lo_x) * scale) << ","
          << format_num(size - margin - (p.y() - lo_y) * scale);
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << format_num(margin + 10.0) << "\" y=\""
        << format_num(margin + 20.0 * (t + 1)) << "\" fill=\""
        << kPlotColors[t % (sizeof(kPlotColors) / sizeof(kPlotColors[0]))]
        << "\" font-size=\"14\">" << trajectories[t].name << "</text>\n";
  }
  svg << "</svg>\n";
}

}  // namespace rodo
