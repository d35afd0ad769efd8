#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "rodo/cli.hpp"
#include "rodo/dataset_io.hpp"
#include "rodo/errors.hpp"
#include "rodo/lie.hpp"

using namespace rodo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rodo_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& file) { return read_text_file(file); }

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return slurp(a) == slurp(b);
}

// Straight +x trajectory at the given stride, world -> sensor convention.
std::vector<SE3> straight_poses(int frames, double step) {
  std::vector<SE3> poses;
  for (int k = 0; k < frames; ++k) {
    Twist xi = Twist::Zero();
    xi[0] = -step * static_cast<double>(k);
    poses.push_back(SE3::exp(xi));
  }
  return poses;
}

}  // namespace

TEST_CASE("config text round trips and rejects bad input") {
  RunConfig cfg;
  cfg.command = "synth";
  cfg.seed = 123;
  cfg.mode = "long";
  cfg.step_m = 0.125;
  cfg.out = "somewhere";

  RunConfig back;
  parse_config(to_key_values(cfg), back);
  CHECK(to_key_values(back) == to_key_values(cfg));

  RunConfig js;
  parse_config("{\"seed\": 9, \"mode\": \"long\", \"lr\": 0.001}", js);
  CHECK(js.seed == 9);
  CHECK(js.mode == "long");
  CHECK(js.lr == doctest::Approx(0.001));

  RunConfig target;
  CHECK_THROWS_AS(parse_config("no_such_key = 1\n", target), Error);
  CHECK_THROWS_AS(parse_config("seed = banana\n", target), Error);
  CHECK_THROWS_AS(parse_config("just a line without equals\n", target), Error);
  CHECK_THROWS_AS(parse_config("{\"seed\": 3", target), Error);

  // Comments and blank lines are fine.
  parse_config("# comment\n\nseed = 4\n", target);
  CHECK(target.seed == 4);
}

TEST_CASE("synth regenerates byte-identical datasets and flags override config") {
  const fs::path root = temp_dir("synth");
  const fs::path a = root / "a", b = root / "b";

  auto args = [&](const fs::path& out) {
    return std::vector<std::string>{
        "synth",  "--out",        out.string(), "--seed",  "11", "--frames",
        "9",      "--trajectory", "stationary", "--noise", "0"};
  };
  REQUIRE(run_cli(args(a)) == 0);
  REQUIRE(run_cli(args(b)) == 0);
  CHECK(same_bytes(a / "frames" / "000000.bin", b / "frames" / "000000.bin"));
  CHECK(same_bytes(a / "gt_traj.txt", b / "gt_traj.txt"));
  CHECK(same_bytes(a / "index.txt", b / "index.txt"));
  CHECK(count_lines(slurp(a / "gt_traj.txt")) == 9);
  CHECK(fs::exists(a / "manifest.json"));

  // Flags override config-file values; the effective config records the result.
  const fs::path cfg_file = root / "base.cfg";
  write_text_file(cfg_file, "seed = 3\nframes = 9\ntrajectory = stationary\nnoise_sigma = 0\n");
  const fs::path c = root / "c";
  REQUIRE(run_cli({"synth", "--config", cfg_file.string(), "--out", c.string(),
                   "--seed", "11"}) == 0);
  const std::string effective = slurp(c / "effective_config.txt");
  CHECK(effective.find("seed = 11") != std::string::npos);
  CHECK(effective.find("frames = 9") != std::string::npos);
  CHECK(same_bytes(a / "frames" / "000000.bin", c / "frames" / "000000.bin"));

  // The emitted effective config reproduces the dataset byte for byte.
  const fs::path d = root / "d";
  RunConfig from_file;
  parse_config(slurp(c / "effective_config.txt"), from_file);
  from_file.out = d.string();
  REQUIRE(cmd_synth(from_file) == 0);
  CHECK(same_bytes(c / "frames" / "000008.bin", d / "frames" / "000008.bin"));

  CHECK(run_cli({"synth", "--seed", "1"}) == 2);                 // no --out
  CHECK(run_cli({"synth", "--out", (root / "e").string(),
                 "--trajectory", "wiggle"}) == 2);               // bad scene
  CHECK(run_cli({"synth", "--grib"}) == 2);                      // unknown flag
  CHECK(run_cli({}) == 2);                                       // no subcommand
  CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("odometry tracks a stationary stream to the origin") {
  const fs::path root = temp_dir("odometry");
  const fs::path ds = root / "ds", tr = root / "tr", out = root / "out";
  REQUIRE(run_cli({"synth", "--out", ds.string(), "--seed", "21", "--frames",
                   "10", "--trajectory", "stationary", "--noise", "0"}) == 0);
  REQUIRE(run_cli({"train-toy", "--out", tr.string(), "--epochs", "0",
                   "--sequences", "1"}) == 0);

  REQUIRE(run_cli({"odometry", "--dataset", ds.string(), "--checkpoint",
                   (tr / "initial.ckpt").string(), "--out", out.string()}) == 0);
  const std::vector<SE3> traj = load_trajectory(out / "trajectory.txt");
  REQUIRE(traj.size() == 10);
  for (const SE3& pose : traj) CHECK(pose.log().norm() < 1e-9);

  // Init window of 8 runs 12 iterations, the two tracked frames 4 each; every
  // iteration takes 2 Gauss-Newton steps.
  const std::string diag = slurp(out / "diagnostics.jsonl");
  CHECK(count_lines(diag) == (12 + 2 * 4) * 2);
  const nlohmann::json first = nlohmann::json::parse(
      diag.substr(0, diag.find('\n')));
  CHECK(first.contains("cost_before"));
  CHECK(first.contains("step_norm"));
  CHECK(first.contains("damping_used"));

  const nlohmann::json stats = nlohmann::json::parse(slurp(out / "stats.json"));
  CHECK(stats["init_frames"] == 8);
  CHECK(stats["init_iterations"] == 12);
  CHECK(stats["track_iterations"] == nlohmann::json({4, 4}));
  CHECK(stats["max_edge_radius"] == 2);

  const nlohmann::json manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["command"] == "odometry");
  CHECK(manifest["config"]["dataset"] == ds.string());
}

TEST_CASE("odometry dispatches baselines and reports data errors") {
  const fs::path root = temp_dir("odometry_err");
  const fs::path ds = root / "ds";
  REQUIRE(run_cli({"synth", "--out", ds.string(), "--seed", "22", "--frames",
                   "10", "--trajectory", "stationary", "--noise", "0"}) == 0);

  // The point-to-point baseline needs no checkpoint.
  const fs::path icp_out = root / "icp";
  REQUIRE(run_cli({"odometry", "--dataset", ds.string(), "--baseline", "icp",
                   "--out", icp_out.string()}) == 0);
  const std::vector<SE3> traj = load_trajectory(icp_out / "trajectory.txt");
  REQUIRE(traj.size() == 10);
  for (const SE3& pose : traj) CHECK(pose.log().norm() < 1e-10);

  CHECK(run_cli({"odometry", "--dataset", ds.string(), "--checkpoint",
                 (root / "missing.ckpt").string(), "--out",
                 (root / "x1").string()}) == 2);
  CHECK(run_cli({"odometry", "--dataset", ds.string(), "--baseline", "gicp",
                 "--out", (root / "x2").string()}) == 2);
  CHECK(run_cli({"odometry", "--dataset", (root / "nowhere").string(),
                 "--baseline", "icp", "--out", (root / "x3").string()}) == 2);

  // A stream shorter than the window never initializes.
  const fs::path tiny = root / "tiny";
  REQUIRE(run_cli({"synth", "--out", tiny.string(), "--seed", "23", "--frames",
                   "5", "--trajectory", "stationary", "--noise", "0"}) == 0);
  const fs::path tr = root / "tr";
  REQUIRE(run_cli({"train-toy", "--out", tr.string(), "--epochs", "0",
                   "--sequences", "1"}) == 0);
  CHECK(run_cli({"odometry", "--dataset", tiny.string(), "--checkpoint",
                 (tr / "initial.ckpt").string(), "--out",
                 (root / "x4").string()}) == 2);
}

TEST_CASE("eval scores drift fixtures in both modes") {
  const fs::path root = temp_dir("eval");
  const fs::path truth_file = root / "truth.txt";
  const fs::path drift_file = root / "drift.txt";
  save_trajectory(truth_file, straight_poses(200, 1.0));
  save_trajectory(drift_file, straight_poses(200, 1.01));

  const fs::path out = root / "vod";
  REQUIRE(run_cli({"eval", drift_file.string(), truth_file.string(), "--out",
                   out.string(), "--mode", "vod"}) == 0);
  const nlohmann::json rep = nlohmann::json::parse(slurp(out / "metrics.json"));
  CHECK(rep["t_rel"].get<double>() == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(rep["r_rel"].get<double>() == 0.0);
  CHECK(rep["t_unit"] == "m/m");
  REQUIRE(rep["per_length"].size() == 8);
  CHECK(rep["per_length"][0]["length"] == 20.0);
  CHECK(rep["per_length"][7]["length"] == 160.0);
  CHECK(fs::exists(out / "metrics.txt"));
  CHECK(fs::exists(out / "trajectories.svg"));
  CHECK(fs::exists(out / "predicted.csv"));

  // Long mode switches the length set and reports percent per 100 m.
  const fs::path truth_long = root / "truth_long.txt";
  const fs::path drift_long = root / "drift_long.txt";
  save_trajectory(truth_long, straight_poses(900, 1.0));
  save_trajectory(drift_long, straight_poses(900, 1.01));
  const fs::path out_long = root / "long";
  REQUIRE(run_cli({"eval", drift_long.string(), truth_long.string(), "--out",
                   out_long.string(), "--mode", "long"}) == 0);
  const nlohmann::json rep_long =
      nlohmann::json::parse(slurp(out_long / "metrics.json"));
  CHECK(rep_long["t_rel"].get<double>() == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(rep_long["t_unit"] == "%");
  REQUIRE(rep_long["per_length"].size() == 8);
  CHECK(rep_long["per_length"][0]["length"] == 100.0);
  CHECK(rep_long["per_length"][7]["length"] == 800.0);

  // Identical trajectories score exact zeros.
  const fs::path out_zero = root / "zero";
  REQUIRE(run_cli({"eval", truth_file.string(), truth_file.string(), "--out",
                   out_zero.string()}) == 0);
  const nlohmann::json rep_zero =
      nlohmann::json::parse(slurp(out_zero / "metrics.json"));
  CHECK(rep_zero["t_rel"].get<double>() == 0.0);
  CHECK(rep_zero["r_rel"].get<double>() == 0.0);

  // Unreadable input and bad mode are usage errors.
  write_text_file(root / "garbage.txt", "this is not a trajectory\n");
  CHECK(run_cli({"eval", (root / "garbage.txt").string(), truth_file.string(),
                 "--out", (root / "x").string()}) == 2);
  CHECK(run_cli({"eval", drift_file.string(), truth_file.string(), "--out",
                 (root / "y").string(), "--mode", "sideways"}) == 2);
  CHECK(run_cli({"eval", "--out", (root / "z").string()}) == 2);
}

TEST_CASE("gradcheck scopes pass and the negative control fails") {
  const fs::path root = temp_dir("gradcheck");
  CHECK(run_cli({"gradcheck", "jacobians"}) == 0);
  CHECK(run_cli({"gradcheck", "ops"}) == 0);
  CHECK(run_cli({"gradcheck", "amba"}) == 0);

  const fs::path out = root / "all";
  CHECK(run_cli({"gradcheck", "--out", out.string()}) == 0);
  const std::string report = slurp(out / "gradcheck_report.txt");
  CHECK(report.find("PASS pose-residual jacobians") != std::string::npos);
  CHECK(report.find("PASS solver backward, two-frame graph") != std::string::npos);
  CHECK(report.find("ALL CHECKS PASSED") != std::string::npos);
  CHECK(report.find("FAIL") == std::string::npos);

  const fs::path nc = root / "nc";
  CHECK(run_cli({"gradcheck", "negative-control", "--out", nc.string()}) == 3);
  const std::string nc_report = slurp(nc / "gradcheck_report.txt");
  CHECK(nc_report.find("FAIL pose-residual jacobians (sign error injected)") !=
        std::string::npos);
  CHECK(nc_report.find("CHECKS FAILED") != std::string::npos);

  CHECK(run_cli({"gradcheck", "everything"}) == 2);
}

TEST_CASE("train-toy writes checkpoints and loss curves deterministically") {
  const fs::path root = temp_dir("train");

  // Zero epochs still emits the initial weights.
  const fs::path zero = root / "zero";
  REQUIRE(run_cli({"train-toy", "--out", zero.string(), "--epochs", "0",
                   "--sequences", "1"}) == 0);
  CHECK(fs::exists(zero / "initial.ckpt"));
  CHECK(fs::exists(zero / "final.ckpt"));
  CHECK(slurp(zero / "loss_curve.csv") == "epoch,mean_loss\n");
  CHECK(same_bytes(zero / "initial.ckpt", zero / "final.ckpt"));

  auto train_args = [&](const fs::path& out) {
    return std::vector<std::string>{"train-toy", "--out", out.string(),
                                    "--epochs", "1", "--sequences", "2",
                                    "--iters", "2", "--seed", "5"};
  };
  const fs::path a = root / "a", b = root / "b";
  REQUIRE(run_cli(train_args(a)) == 0);
  REQUIRE(run_cli(train_args(b)) == 0);
  CHECK(same_bytes(a / "loss_curve.csv", b / "loss_curve.csv"));
  CHECK(count_lines(slurp(a / "loss_curve.csv")) == 2);  // header + 1 epoch
  CHECK(fs::exists(a / "epoch_1.ckpt"));
  CHECK(fs::exists(a / "train_log.txt"));
  CHECK_FALSE(same_bytes(a / "initial.ckpt", a / "final.ckpt"));

  // Training can also consume a dataset directory from disk.
  const fs::path ds = root / "ds";
  REQUIRE(run_cli({"synth", "--out", ds.string(), "--seed", "31", "--frames",
                   "8", "--step", "0.25"}) == 0);
  const fs::path from_disk = root / "disk";
  REQUIRE(run_cli({"train-toy", "--out", from_disk.string(), "--dataset",
                   ds.string(), "--epochs", "1", "--iters", "1"}) == 0);
  CHECK(fs::exists(from_disk / "epoch_1.ckpt"));

  CHECK(run_cli({"train-toy", "--sequences", "1"}) == 2);  // no --out
}

#ifdef RODO_CLI_BIN
TEST_CASE("the standalone binary propagates exit codes") {
  const fs::path root = temp_dir("binary");
  const std::string bin = RODO_CLI_BIN;
  auto shell = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(shell("synth --out " + (root / "ds").string() +
              " --seed 2 --frames 4 --trajectory stationary") == 0);
  CHECK(shell("synth") == 2);
  CHECK(shell("gradcheck negative-control") == 3);
  CHECK(shell("--help") == 0);
}
#endif
