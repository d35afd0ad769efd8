#include "rodo/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rodo/baselines.hpp"
#include "rodo/dataset_io.hpp"
#include "rodo/errors.hpp"
#include "rodo/evaluation.hpp"
#include "rodo/gradcheck.hpp"
#include "rodo/pose_tensor.hpp"
#include "rodo/synthetic.hpp"
#include "rodo/tracker.hpp"

namespace rodo {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("bad integer for '" + key + "': " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("bad number for '" + key + "': " + v);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("bad unsigned integer for '" + key + "': " + v);
  }
}

// Single source of truth for config keys: serialization, file parsing, and
// the manifest all walk this table.
struct ConfigKey {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys() {
  auto str = [](std::string RunConfig::* f) {
    return ConfigKey{"",
                     [f](const RunConfig& c) { return c.*f; },
                     [f](RunConfig& c, const std::string& v) { c.*f = v; }};
  };
  auto num_i = [](int RunConfig::* f) {
    return ConfigKey{
        "", [f](const RunConfig& c) { return std::to_string(c.*f); },
        [f](RunConfig& c, const std::string& v) { c.*f = parse_int("", v); }};
  };
  auto num_d = [](double RunConfig::* f) {
    return ConfigKey{
        "", [f](const RunConfig& c) { return fmt_double(c.*f); },
        [f](RunConfig& c, const std::string& v) { c.*f = parse_double("", v); }};
  };
  static const std::vector<ConfigKey> keys = [&] {
    std::vector<ConfigKey> k;
    auto add = [&k](const char* name, ConfigKey key) {
      key.name = name;
      k.push_back(std::move(key));
    };
    add("accel_m", num_d(&RunConfig::accel_m));
    add("baseline", str(&RunConfig::baseline));
    add("checkpoint", str(&RunConfig::checkpoint));
    add("command", str(&RunConfig::command));
    add("dataset", str(&RunConfig::dataset));
    add("dynamic_fraction", num_d(&RunConfig::dynamic_fraction));
    add("epochs", num_i(&RunConfig::epochs));
    add("frames", num_i(&RunConfig::frames));
    add("iters", num_i(&RunConfig::iters));
    add("lr", num_d(&RunConfig::lr));
    add("mode", str(&RunConfig::mode));
    add("model", str(&RunConfig::model));
    add("noise_sigma", num_d(&RunConfig::noise_sigma));
    add("out", str(&RunConfig::out));
    add("predicted", str(&RunConfig::predicted));
    add("scope", str(&RunConfig::scope));
    add("seed", ConfigKey{"",
                          [](const RunConfig& c) { return std::to_string(c.seed); },
                          [](RunConfig& c, const std::string& v) {
                            c.seed = parse_u64("seed", v);
                          }});
    add("sequences", num_i(&RunConfig::sequences));
    add("step_m", num_d(&RunConfig::step_m));
    add("trajectory", str(&RunConfig::trajectory));
    add("truth", str(&RunConfig::truth));
    add("window", num_i(&RunConfig::window));
    add("yaw_rate_deg", num_d(&RunConfig::yaw_rate_deg));
    return k;
  }();
  return keys;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys())
    if (key == k.name) {
      try {
        k.set(cfg, value);
      } catch (const Error&) {
        throw Error("bad value for '" + key + "': " + value);
      }
      return;
    }
  throw Error("unknown config key: " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

nlohmann::json config_json(const RunConfig& cfg) {
  nlohmann::json j;
  for (const ConfigKey& k : config_keys()) j[k.name] = k.get(cfg);
  return j;
}

void write_effective_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text_file(dir / "effective_config.txt", to_key_values(cfg));
}

void write_manifest(const fs::path& dir, const RunConfig& cfg,
                    std::vector<std::string> outputs) {
  outputs.push_back("effective_config.txt");
  outputs.push_back("manifest.json");
  std::sort(outputs.begin(), outputs.end());
  const nlohmann::json manifest{{"command", cfg.command},
                                {"config", config_json(cfg)},
                                {"outputs", outputs}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}

// Exception -> exit code mapping shared by every subcommand.
template <typename Body>
int guarded(Body&& body) {
  try {
    return body();
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NotPositiveDefinite& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

SceneSpec scene_from(const RunConfig& cfg) {
  SceneSpec spec;
  spec.seed = cfg.seed;
  spec.frames = cfg.frames;
  spec.trajectory = cfg.trajectory;
  spec.step_m = cfg.step_m;
  spec.accel_m = cfg.accel_m;
  spec.yaw_rate_deg = cfg.yaw_rate_deg;
  spec.noise_sigma = cfg.noise_sigma;
  spec.dynamic_fraction = cfg.dynamic_fraction;
  return spec;
}

ModelConfig model_preset(const std::string& name) {
  ModelConfig m;
  if (name == "full") return m.sync();
  if (name == "toy") {
    m.backbone.radii = {0.6, 1.2};
    m.backbone.ball_samples = 6;
    m.backbone.scale_dim = 4;
    m.backbone.scale_hidden = 6;
    m.backbone.embed_hidden = 8;
    m.backbone.embed_dim = 8;
    m.backbone.clusters = 4;
    m.backbone.center_k = 4;
    m.backbone.out_dim = 16;
    m.op.hidden = 8;
    m.op.flow_dim = 4;
    m.op.head_hidden = 8;
    m.op.lookup = LookupConfig{4, 3, 8, 4};
    return m.sync();
  }
  throw Error("unknown model preset: " + name + " (expected toy or full)");
}

MetricMode mode_from(const std::string& name) {
  if (name == "vod") return MetricMode::kVod;
  if (name == "long") return MetricMode::kLong;
  throw Error("unknown metric mode: " + name + " (expected vod or long)");
}

TrainingSequence to_training_sequence(const std::vector<SynthFrame>& frames) {
  TrainingSequence seq;
  for (const SynthFrame& f : frames) {
    seq.frames.push_back(f.cloud);
    seq.gt.push_back(f.gt_pose);
  }
  return seq;
}

// Deterministic family of short scenes: strides, arcs, and accelerating
// runs, all derived from the base seed.
std::vector<TrainingSequence> synthesize_training_set(const RunConfig& cfg) {
  std::vector<TrainingSequence> set;
  for (int k = 0; k < cfg.sequences; ++k) {
    SceneSpec s;
    s.seed = cfg.seed + 7919ULL * static_cast<uint64_t>(k + 1);
    s.frames = kTrainingFrames;
    s.noise_sigma = cfg.noise_sigma;
    s.dynamic_fraction = cfg.dynamic_fraction;
    s.step_m = cfg.step_m * (0.6 + 0.2 * (k % 5));
    switch (k % 3) {
      case 0:
        s.trajectory = "straight";
        break;
      case 1:
        s.trajectory = "arc";
        s.yaw_rate_deg = 1.5 + 0.5 * (k % 4);
        break;
      default:
        s.trajectory = "straight";
        s.accel_m = 0.01;
        break;
    }
    set.push_back(to_training_sequence(synth_sequence(make_scene(s), s.frames)));
  }
  return set;
}

TrainingSequence sequence_from_dataset(const Dataset& data,
                                       const fs::path& where) {
  require(!data.gt.empty(),
          "training data needs ground truth: " + where.string());
  require(static_cast<int>(data.clouds.size()) >= kTrainingFrames,
          "training sequences need >= " + std::to_string(kTrainingFrames) +
              " frames: " + where.string());
  TrainingSequence seq;
  for (int f = 0; f < kTrainingFrames; ++f) {
    seq.frames.push_back(data.clouds[f]);
    seq.gt.push_back(data.gt[f]);
  }
  return seq;
}

// A dataset directory is one sequence; a directory of dataset directories is
// one sequence each (sorted by name). Only the first 7 frames of each are
// used.
std::vector<TrainingSequence> load_training_set(const fs::path& dir) {
  require(fs::exists(dir), "dataset not found: " + dir.string());
  if (fs::exists(dir / "index.txt"))
    return {sequence_from_dataset(load_dataset(dir), dir)};
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "index.txt"))
      subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  require(!subdirs.empty(), "no dataset directories under " + dir.string());
  std::vector<TrainingSequence> set;
  for (const fs::path& sub : subdirs)
    set.push_back(sequence_from_dataset(load_dataset(sub), sub));
  return set;
}

// ---- gradcheck suites ----

struct SuiteResult {
  std::vector<std::string> lines;
  bool ok = true;

  void record(const std::string& name, bool passed, double worst,
              double tolerance) {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " " << name << " (worst " << worst
       << ", tolerance " << tolerance << ")";
    lines.push_back(os.str());
    ok = ok && passed;
  }
};

SE3 suite_random_pose(std::mt19937_64& rng, double rot, double trans) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Twist xi;
  xi << trans * u(rng), trans * u(rng), trans * u(rng), rot * u(rng),
      rot * u(rng), rot * u(rng);
  return SE3::exp(xi);
}

PointCloud suite_random_cloud(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  PointCloud cloud;
  for (int i = 0; i < n; ++i) cloud.points.emplace_back(u(rng), u(rng), u(rng));
  return cloud;
}

Tensor suite_random_tensor(std::mt19937_64& rng, std::vector<int> shape,
                           double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (Eigen::Index i = 0; i < t.mutable_values().size(); ++i)
    t.mutable_values()[i] = u(rng);
  return t;
}

// Analytic pose-residual jacobians against central differences of the
// retracted residual. flip_sign injects a deliberate sign error to prove the
// harness reports failures.
void suite_jacobians(SuiteResult& result, bool flip_sign) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double h = 1e-6;
  const double sign = flip_sign ? -1.0 : 1.0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const SE3 ta = suite_random_pose(rng, 0.8, 2.0);
    const SE3 tb = suite_random_pose(rng, 0.8, 2.0);
    EdgeTerms terms;
    const int n = 4;
    terms.points.resize(n, 3);
    terms.target.resize(n, 3);
    terms.weight = Eigen::MatrixX3d::Ones(n, 3);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        terms.points(i, c) = u(rng);
        terms.target(i, c) = u(rng);
      }
    linearize_edge(ta, tb, terms);

    auto residual_at = [&](const SE3& pa, const SE3& pb, int i) -> Vec3 {
      const SE3 t12 = pb * pa.inverse();
      return Vec3(terms.target.row(i)) - t12 * Vec3(terms.points.row(i));
    };
    for (int k = 0; k < 6; ++k) {
      Twist dxi = Twist::Zero();
      dxi[k] = h;
      for (int i = 0; i < n; ++i) {
        const Vec3 db = (residual_at(ta, retract(tb, dxi), i) -
                         residual_at(ta, retract(tb, Twist(-dxi)), i)) /
                        (2.0 * h);
        const Vec3 da = (residual_at(retract(ta, dxi), tb, i) -
                         residual_at(retract(ta, Twist(-dxi)), tb, i)) /
                        (2.0 * h);
        worst = std::max(
            worst, (db - sign * terms.j2[i].col(k)).lpNorm<Eigen::Infinity>());
        worst = std::max(
            worst, (da - sign * terms.j1[i].col(k)).lpNorm<Eigen::Infinity>());
      }
    }
  }
  result.record(flip_sign ? "pose-residual jacobians (sign error injected)"
                          : "pose-residual jacobians vs finite differences",
                worst < 1e-5, worst, 1e-5);
}

FrameGraph suite_bare_graph(std::vector<PointCloud> clouds,
                            std::vector<SE3> poses, std::vector<uint8_t> fixed,
                            const std::vector<std::pair<int, int>>& edge_list) {
  FrameGraph g;
  for (int f = 0; f < static_cast<int>(clouds.size()); ++f) g.ids.push_back(f);
  g.clouds = std::move(clouds);
  g.poses = std::move(poses);
  g.fixed = std::move(fixed);
  for (auto [a, b] : edge_list) {
    EdgeState e;
    e.a = a;
    e.b = b;
    g.edges.push_back(e);
  }
  return g;
}

Tensor suite_gt_targets(const FrameGraph& g, int edge,
                        const std::vector<SE3>& gt, std::mt19937_64& rng,
                        double noise) {
  const EdgeState& e = g.edges[edge];
  const SE3 t12 = gt[e.b] * gt[e.a].inverse();
  const PointCloud& cloud = g.clouds[e.a];
  Tensor out({static_cast<int>(cloud.points.size()), 3}, 0.0);
  std::uniform_real_distribution<double> u(-noise, noise);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3 p = t12 * cloud.points[i];
    for (int c = 0; c < 3; ++c) out.mutable_values()[i * 3 + c] = p[c] + u(rng);
  }
  return out;
}

// Reverse-mode gradients of the Gauss-Newton step wrt targets and
// confidences, on a two-frame and a chained three-frame graph.
void suite_amba(SuiteResult& result) {
  {
    std::mt19937_64 rng(61);
    const SE3 ta = suite_random_pose(rng, 0.4, 1.5);
    const SE3 tb_gt = suite_random_pose(rng, 0.4, 1.5);
    FrameGraph g = suite_bare_graph(
        {suite_random_cloud(rng, 12, 3.0), suite_random_cloud(rng, 12, 3.0)},
        {ta, retract(tb_gt, 0.03 * Twist::Random())}, {1, 0}, {{0, 1}});
    const Tensor targets = suite_gt_targets(g, 0, {ta, tb_gt}, rng, 0.1);
    const Tensor conf = suite_random_tensor(rng, {12, 3}, 0.25, 0.9);
    const std::vector<SE3> refs = {ta, tb_gt};
    OperatorConfig cfg;
    auto fn = [&](const std::vector<Tensor>& in) {
      return pose_loss(amba_step(g, pose_state_from(g.poses), {in[0]}, {in[1]}, cfg),
                       refs);
    };
    const GradCheckReport report = gradcheck(fn, {targets, conf});
    result.record("solver backward, two-frame graph", report.passed(1e-4),
                  report.worst, 1e-4);
  }
  {
    std::mt19937_64 rng(71);
    std::vector<SE3> gt = {suite_random_pose(rng, 0.4, 1.5),
                           suite_random_pose(rng, 0.4, 1.5),
                           suite_random_pose(rng, 0.4, 1.5)};
    std::vector<SE3> init = gt;
    for (int f = 1; f < 3; ++f) init[f] = retract(gt[f], 0.04 * Twist::Random());
    FrameGraph g = suite_bare_graph(
        {suite_random_cloud(rng, 8, 3.0), suite_random_cloud(rng, 8, 3.0),
         suite_random_cloud(rng, 8, 3.0)},
        init, {1, 0, 0}, {{0, 1}, {1, 0}, {1, 2}, {2, 0}});
    std::vector<Tensor> inputs;
    for (int e = 0; e < g.edge_count(); ++e) {
      inputs.push_back(suite_gt_targets(g, e, gt, rng, 0.08));
      inputs.push_back(suite_random_tensor(rng, {8, 3}, 0.25, 0.9));
    }
    OperatorConfig cfg;
    auto fn = [&](const std::vector<Tensor>& in) {
      std::vector<Tensor> targets, confs;
      for (int e = 0; e < g.edge_count(); ++e) {
        targets.push_back(in[2 * e]);
        confs.push_back(in[2 * e + 1]);
      }
      Tensor pose = pose_state_from(g.poses);
      pose = amba_step(g, pose, targets, confs, cfg);
      pose = amba_step(g, pose, targets, confs, cfg);
      return pose_loss(pose, gt);
    };
    const GradCheckReport report = gradcheck(fn, inputs);
    result.record("solver backward, chained three-frame graph",
                  report.passed(1e-4), report.worst, 1e-4);
  }
}

// Primitive tape operations through compositions that touch the common
// kernels. Inputs stay away from the relu kink.
void suite_ops(SuiteResult& result) {
  std::mt19937_64 rng(23);
  const Tensor x = suite_random_tensor(rng, {4, 3}, 0.2, 0.9);
  const Tensor w = suite_random_tensor(rng, {3, 5}, -0.8, 0.8);
  const Tensor b = suite_random_tensor(rng, {5}, -0.3, 0.3);
  {
    auto fn = [](const std::vector<Tensor>& in) {
      const Tensor lin = linear(in[0], in[1], in[2]);
      return sum(mul(sigmoid(lin), tanh_op(matmul(in[0], in[1]))));
    };
    const GradCheckReport report = gradcheck(fn, {x, w, b});
    result.record("dense layer with sigmoid/tanh gates", report.passed(1e-6),
                  report.worst, 1e-6);
  }
  {
    auto fn = [](const std::vector<Tensor>& in) {
      const Tensor both = concat({in[0], scalar_mul(in[0], 0.5)}, 0);
      return mean(mul(slice(both, 0, 2, 6), slice(both, 0, 1, 5)));
    };
    const GradCheckReport report = gradcheck(fn, {x});
    result.record("concat/slice routing", report.passed(1e-6), report.worst,
                  1e-6);
  }
  {
    auto fn = [](const std::vector<Tensor>& in) {
      return sum(mul(softmax(in[0]), relu(in[1])));
    };
    const GradCheckReport report =
        gradcheck(fn, {suite_random_tensor(rng, {3, 4}, -1.0, 1.0),
                       suite_random_tensor(rng, {3, 4}, 0.2, 1.0)});
    result.record("softmax attention weighting", report.passed(1e-6),
                  report.worst, 1e-6);
  }
}

}  // namespace

std::string to_key_values(const RunConfig& cfg) {
  std::ostringstream os;
  for (const ConfigKey& k : config_keys()) os << k.name << " = " << k.get(cfg) << "\n";
  return os.str();
}

void parse_config(const std::string& text, RunConfig& cfg) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("config is not valid JSON: ") + e.what());
    }
    require(j.is_object(), "JSON config must be an object");
    for (const auto& [key, value] : j.items())
      set_key(cfg, key,
              value.is_string() ? value.get<std::string>() : value.dump());
    return;
  }
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string entry = trim(line);
    if (entry.empty() || entry.front() == '#') continue;
    const auto eq = entry.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(line_no) + " is not key=value: " + entry);
    set_key(cfg, trim(entry.substr(0, eq)), trim(entry.substr(eq + 1)));
  }
}

int cmd_synth(const RunConfig& in) {
  return guarded([&] {
    RunConfig cfg = in;
    cfg.command = "synth";
    require(!cfg.out.empty(), "synth requires --out");

    const SceneSpec spec = scene_from(cfg);
    const SyntheticScene scene = make_scene(spec);
    const std::vector<SynthFrame> frames = synth_sequence(scene, spec.frames);

    std::vector<std::string> outputs = {"index.txt", "gt_traj.txt", "frames/"};
    const nlohmann::json manifest{{"command", cfg.command},
                                  {"config", config_json(cfg)},
                                  {"frame_count", static_cast<int>(frames.size())},
                                  {"outputs", outputs}};
    save_dataset(cfg.out, frames, manifest.dump(2) + "\n");
    write_effective_config(cfg.out, cfg);
    std::cout << "wrote " << frames.size() << " frames to " << cfg.out << "\n";
    return 0;
  });
}

int cmd_odometry(const RunConfig& in) {
  return guarded([&] {
    RunConfig cfg = in;
    cfg.command = "odometry";
    require(!cfg.dataset.empty(), "odometry requires --dataset");
    require(!cfg.out.empty(), "odometry requires --out");

    const Dataset data = load_dataset(cfg.dataset);
    fs::create_directories(cfg.out);
    const fs::path out(cfg.out);
    std::vector<std::string> outputs = {"trajectory.txt"};

    if (cfg.baseline == "icp") {
      const Trajectory traj = icp_odometry(data.clouds);
      save_trajectory(out / "trajectory.txt", traj.poses);
      std::cout << "icp baseline: " << traj.size() << " poses\n";
    } else {
      require(cfg.baseline == "none",
              "unknown baseline: " + cfg.baseline + " (expected none or icp)");
      require(!cfg.checkpoint.empty(), "odometry requires --checkpoint");
      if (!fs::exists(cfg.checkpoint)) {
        std::cerr << "error: checkpoint not found: " << cfg.checkpoint << "\n";
        return 2;
      }
      std::string metadata;
      const ParamStore params = load_checkpoint(cfg.checkpoint, &metadata);
      TrackerConfig schedule;
      const ModelConfig model = model_from_metadata(metadata, &schedule);
      if (cfg.window > 0) schedule.window = cfg.window;
      if (cfg.iters > 0) schedule.track_iterations = cfg.iters;

      Tracker tracker(params, schedule, model);
      for (const PointCloud& cloud : data.clouds) tracker.push(cloud);
      tracker.finish();
      save_trajectory(out / "trajectory.txt", tracker.trajectory());

      std::ostringstream diag;
      for (const StepDiagnostics& d : tracker.diagnostics())
        diag << nlohmann::json{{"cost_before", d.cost_before},
                               {"step_norm", d.step_norm},
                               {"damping_used", d.damping_used}}
                    .dump()
             << "\n";
      write_text_file(out / "diagnostics.jsonl", diag.str());

      const ScheduleStats& st = tracker.stats();
      const nlohmann::json stats{
          {"init_frames", st.init_frames},
          {"init_iterations", st.init_iterations},
          {"track_iterations", st.track_iterations},
          {"ba_steps_per_iteration", st.ba_steps_per_iteration},
          {"window_sizes", st.window_sizes},
          {"max_edge_radius", st.max_edge_radius}};
      write_text_file(out / "stats.json", stats.dump(2) + "\n");
      outputs.push_back("diagnostics.jsonl");
      outputs.push_back("stats.json");
      std::cout << "tracked " << tracker.trajectory().size() << " poses\n";
    }

    write_effective_config(out, cfg);
    write_manifest(out, cfg, outputs);
    return 0;
  });
}

int cmd_eval(const RunConfig& in) {
  return guarded([&] {
    RunConfig cfg = in;
    cfg.command = "eval";
    require(!cfg.predicted.empty(), "eval requires a predicted trajectory");
    require(!cfg.truth.empty(), "eval requires a ground-truth trajectory");
    require(!cfg.out.empty(), "eval requires --out");

    const Trajectory pred = make_trajectory(load_trajectory(cfg.predicted));
    const Trajectory truth = make_trajectory(load_trajectory(cfg.truth));
    const MetricReport report = kitti_metrics(pred, truth, mode_from(cfg.mode));

    const fs::path out(cfg.out);
    fs::create_directories(out);
    write_text_file(out / "metrics.json", report.json() + "\n");
    write_text_file(out / "metrics.txt", report.table());
    export_plot_data(out, {{"predicted", pred}, {"ground_truth", truth}});
    write_effective_config(out, cfg);
    write_manifest(out, cfg, {"metrics.json", "metrics.txt", "predicted.csv",
                              "ground_truth.csv", "trajectories.csv",
                              "trajectories.svg"});
    std::cout << report.table();
    return 0;
  });
}

int cmd_gradcheck(const RunConfig& in) {
  return guarded([&] {
    RunConfig cfg = in;
    cfg.command = "gradcheck";
    SuiteResult result;
    if (cfg.scope == "all") {
      suite_jacobians(result, false);
      suite_amba(result);
      suite_ops(result);
    } else if (cfg.scope == "jacobians") {
      suite_jacobians(result, false);
    } else if (cfg.scope == "amba") {
      suite_amba(result);
    } else if (cfg.scope == "ops") {
      suite_ops(result);
    } else if (cfg.scope == "negative-control") {
      // Deliberately broken comparison; the command must report the failure.
      suite_jacobians(result, true);
    } else {
      throw Error("unknown gradcheck scope: " + cfg.scope +
                  " (expected all, jacobians, amba, ops, negative-control)");
    }

    std::ostringstream report;
    for (const std::string& line : result.lines) report << line << "\n";
    report << (result.ok ? "ALL CHECKS PASSED" : "CHECKS FAILED") << "\n";
    std::cout << report.str();
    if (!cfg.out.empty()) {
      const fs::path out(cfg.out);
      fs::create_directories(out);
      write_text_file(out / "gradcheck_report.txt", report.str());
      write_effective_config(out, cfg);
      write_manifest(out, cfg, {"gradcheck_report.txt"});
    }
    return result.ok ? 0 : 3;
  });
}

int cmd_train_toy(const RunConfig& in) {
  return guarded([&] {
    RunConfig cfg = in;
    cfg.command = "train-toy";
    require(!cfg.out.empty(), "train-toy requires --out");
    require(cfg.epochs >= 0, "epochs must be >= 0");

    const std::vector<TrainingSequence> dataset =
        cfg.dataset.empty() ? synthesize_training_set(cfg)
                            : load_training_set(cfg.dataset);
    require(!dataset.empty(), "training set is empty");

    const ModelConfig model = model_preset(cfg.model);
    TrackerConfig schedule;
    if (cfg.iters > 0) schedule.train_unroll = cfg.iters;

    ParamStore params;
    std::mt19937_64 rng(cfg.seed);
    init_model(params, model, rng);

    const fs::path out(cfg.out);
    fs::create_directories(out);
    save_checkpoint(out / "initial.ckpt", params,
                    model_metadata_json(model, schedule));

    TrainOptions opts;
    opts.epochs = cfg.epochs;
    opts.lr = cfg.lr;
    opts.seed = cfg.seed;
    opts.out_dir = out;
    const TrainResult result = train_toy(params, dataset, schedule, model, opts);

    save_checkpoint(out / "final.ckpt", params,
                    model_metadata_json(model, schedule));
    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      csv << (e + 1) << "," << fmt_double(result.epoch_loss[e]) << "\n";
    write_text_file(out / "loss_curve.csv", csv.str());

    std::vector<std::string> outputs = {"initial.ckpt", "final.ckpt",
                                        "loss_curve.csv", "train_log.txt"};
    for (const fs::path& ckpt : result.checkpoints)
      outputs.push_back(ckpt.filename().string());
    write_effective_config(out, cfg);
    write_manifest(out, cfg, outputs);

    if (!result.epoch_loss.empty())
      std::cout << "trained " << cfg.epochs << " epochs over " << dataset.size()
                << " sequences; first epoch " << result.epoch_loss.front()
                << ", last epoch " << result.epoch_loss.back() << "\n";
    else
      std::cout << "no epochs requested; wrote the initial checkpoint\n";
    return 0;
  });
}

int run_cli(const std::vector<std::string>& args) {
  RunConfig cfg;
  std::string config_path;

  // Config file values load before flag parsing so that flags override them.
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (!config_path.empty()) {
    try {
      parse_config(read_text_file(config_path), cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }

  CLI::App app{"desk-scale 4D radar odometry toolkit"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "key=value or JSON config file; flags override");
    sub->add_option("--dataset", cfg.dataset, "dataset directory");
    sub->add_option("--checkpoint", cfg.checkpoint, "model checkpoint file");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--seed", cfg.seed, "RNG seed");
    sub->add_option("--mode", cfg.mode, "metric mode: vod | long");
    sub->add_option("--baseline", cfg.baseline, "odometry baseline: none | icp");
    sub->add_option("--model", cfg.model, "model width preset: toy | full");
    sub->add_option("--iters", cfg.iters,
                    "iteration override (odometry: per frame, train-toy: unroll)");
    sub->add_option("--window", cfg.window, "sliding-window size override");
    sub->add_option("--frames", cfg.frames, "synthetic frame count");
    sub->add_option("--trajectory", cfg.trajectory,
                    "synthetic path: stationary | straight | arc");
    sub->add_option("--step", cfg.step_m, "synthetic stride [m/frame]");
    sub->add_option("--accel", cfg.accel_m, "synthetic stride increment");
    sub->add_option("--yaw-rate", cfg.yaw_rate_deg, "synthetic turn rate [deg/frame]");
    sub->add_option("--noise", cfg.noise_sigma, "synthetic position noise [m]");
    sub->add_option("--dynamic", cfg.dynamic_fraction,
                    "fraction of moving synthetic points");
    sub->add_option("--epochs", cfg.epochs, "training epochs");
    sub->add_option("--lr", cfg.lr, "learning rate");
    sub->add_option("--sequences", cfg.sequences, "synthetic training sequences");
    return sub;
  };

  CLI::App* synth = add_common(
      app.add_subcommand("synth", "generate a synthetic radar dataset"));
  CLI::App* odometry = add_common(
      app.add_subcommand("odometry", "track a point-cloud stream"));
  CLI::App* eval = add_common(
      app.add_subcommand("eval", "score a trajectory against ground truth"));
  eval->add_option("predicted", cfg.predicted, "predicted trajectory file");
  eval->add_option("truth", cfg.truth, "ground-truth trajectory file");
  CLI::App* gradcheck_cmd = add_common(
      app.add_subcommand("gradcheck", "finite-difference verification suites"));
  gradcheck_cmd->add_option(
      "scope", cfg.scope, "all | jacobians | amba | ops | negative-control");
  CLI::App* train = add_common(
      app.add_subcommand("train-toy", "train the operator on toy sequences"));

  std::vector<const char*> argv = {"rodo"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the error message
    return code == 0 ? 0 : 2;
  }

  if (app.got_subcommand(synth)) return cmd_synth(cfg);
  if (app.got_subcommand(odometry)) return cmd_odometry(cfg);
  if (app.got_subcommand(eval)) return cmd_eval(cfg);
  if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(cfg);
  if (app.got_subcommand(train)) return cmd_train_toy(cfg);
  return 2;
}

}  // namespace rodo
