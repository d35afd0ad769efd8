#pragma once

#include <string>
#include <vector>

namespace rodo {

// One flat option namespace shared by every subcommand. A run's effective
// configuration serializes to sorted key=value lines (JSON also accepted on
// input) and is written next to the outputs, so any run can be reproduced
// from the file it left behind.
struct RunConfig {
  std::string command;  // recorded for provenance; the subcommand governs
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::string predicted;  // eval inputs
  std::string truth;
  std::string scope = "all";  // gradcheck suite selector
  uint64_t seed = 1;
  std::string mode = "vod";       // vod | long
  std::string baseline = "none";  // none | icp
  std::string model = "toy";      // toy | full width preset
  int iters = 0;   // 0 = module default (odometry: per-frame iterations,
                   // train-toy: unrolled iterations)
  int window = 0;  // 0 = module default
  // synthetic scene
  int frames = 40;
  std::string trajectory = "straight";
  double step_m = 0.3;
  double accel_m = 0.0;
  double yaw_rate_deg = 0.0;
  double noise_sigma = 0.02;
  double dynamic_fraction = 0.0;
  // training
  int epochs = 10;
  double lr = 2e-4;
  int sequences = 30;
};

// Sorted key=value serialization; parse_config applies a file's values over
// the given base (key=value lines, or a JSON object when the text starts
// with '{'). Unknown keys or malformed values throw Error.
std::string to_key_values(const RunConfig& cfg);
void parse_config(const std::string& text, RunConfig& cfg);

// Subcommand entry points; each returns a process exit code
// (0 success, 2 usage/data error, 3 numerical failure).
int cmd_synth(const RunConfig& cfg);
int cmd_odometry(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_gradcheck(const RunConfig& cfg);
int cmd_train_toy(const RunConfig& cfg);

// Full argv-level driver (args excludes the program name).
int run_cli(const std::vector<std::string>& args);

}  // namespace rodo
