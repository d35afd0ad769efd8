#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rodo/backbone.hpp"
#include "rodo/neural_opt.hpp"

namespace rodo {

struct TrackerConfig {
  int window = 8;           // sliding-window size
  int init_iterations = 12; // operator iterations on the initial window
  int track_iterations = 4; // operator iterations per incoming frame
  int ba_steps = 2;         // Gauss-Newton steps inside each iteration
  int edge_radius = 2;      // connect frames within this index distance
  int train_unroll = 15;    // unrolled iterations per training step
};

// Full model = two backbone roles + correlation lookup + iteration operator.
struct ModelConfig {
  BackboneConfig backbone;
  OperatorConfig op;

  // The operator consumes backbone context channels; keep widths coupled.
  ModelConfig& sync() {
    op.context_dim = backbone.out_dim;
    return *this;
  }
};

void init_model(ParamStore& params, const ModelConfig& cfg,
                std::mt19937_64& rng);

// JSON description of a model and schedule, stored as checkpoint metadata so
// a reloaded checkpoint rebuilds the exact architecture it was trained with.
// model_from_metadata tolerates extra keys and falls back to the defaults
// for missing ones; the schedule is written into *schedule when non-null.
std::string model_metadata_json(const ModelConfig& model,
                                const TrackerConfig& cfg);
ModelConfig model_from_metadata(const std::string& metadata_json,
                                TrackerConfig* schedule = nullptr);

// Extracts both feature roles for one frame and appends them to the graph
// caches (graph.features / graph.context at the frame's index).
void attach_frame_caches(FrameGraph& graph, int frame_index,
                         const ParamStore& params, const ModelConfig& cfg);

// Constant-velocity prediction from an ordered pose history (oldest first):
// T_new = (T_k T_{k-1}^-1) T_k; a single pose predicts itself.
// Throws EmptyHistory on an empty history.
SE3 motion_model_predict(const std::vector<SE3>& history);

// Training sample: a short sequence with ground truth. The graph connects
// frames within the edge radius (both directions), fixes frame 0 at its
// ground-truth pose, and starts every pose at frame 0's ground truth (zero
// initial flows). Throws WrongLength unless exactly 7 frames are given.
struct TrainingSequence {
  std::vector<PointCloud> frames;
  std::vector<SE3> gt;  // world -> sensor
};
inline constexpr int kTrainingFrames = 7;

FrameGraph build_training_graph(const TrainingSequence& sequence,
                                const ParamStore& params,
                                const ModelConfig& cfg,
                                const TrackerConfig& tracker_cfg);

// Observed schedule, recorded while running (not echoed from the config).
struct ScheduleStats {
  int init_frames = 0;
  int init_iterations = 0;
  std::vector<int> track_iterations;       // per track call
  std::vector<int> ba_steps_per_iteration; // per track call
  std::vector<int> window_sizes;           // after each track call
  int max_edge_radius = 0;  // largest frame-id distance of any edge built
};

// Sliding-window odometry front end. Frames are pushed one at a time; the
// first `window` frames are buffered and solved together (initialization),
// afterwards each push is one tracking update that emits exactly one pose.
class Tracker {
 public:
  Tracker(const ParamStore& params, TrackerConfig cfg, ModelConfig model);

  void push(const PointCloud& frame);
  bool initialized() const { return initialized_; }

  // Flushes the remaining window poses into the trajectory. Throws
  // InsufficientFrames when the stream ended before initialization.
  void finish();

  // world -> sensor pose per consumed frame, in arrival order.
  const std::vector<SE3>& trajectory() const { return trajectory_; }
  const FrameGraph& graph() const { return graph_; }
  const ScheduleStats& stats() const { return stats_; }
  const std::vector<StepDiagnostics>& diagnostics() const { return diags_; }

 private:
  void initialize_window();
  void track(const PointCloud& frame);
  void add_frame(const PointCloud& frame, const SE3& pose);
  void remove_oldest();

  const ParamStore& params_;
  TrackerConfig cfg_;
  ModelConfig model_;
  FrameGraph graph_;
  std::vector<PointCloud> pending_;
  std::vector<SE3> trajectory_;
  std::vector<StepDiagnostics> diags_;
  ScheduleStats stats_;
  bool initialized_ = false;
  int next_id_ = 0;
};

// --- toy end-to-end training ---

struct TrainOptions {
  int epochs = 10;
  double lr = 2e-4;
  // Learning rate is multiplied by 0.1 after each listed epoch (1-based).
  // Empty = thirds of the run, mirroring a decay every 10 of 30 epochs.
  std::vector<int> milestones;
  uint64_t seed = 7;
  std::filesystem::path out_dir;  // empty: no checkpoints / logs on disk
};

struct TrainResult {
  std::vector<double> step_loss;   // one entry per optimizer step
  std::vector<double> epoch_loss;  // mean loss per epoch
  std::vector<std::filesystem::path> checkpoints;
};

// One unrolled training step on a sequence: builds the graph, runs
// train_unroll iterations, evaluates the pose loss against ground truth, and
// back-propagates through the whole pipeline (iteration segments are
// recomputed one at a time to keep memory flat). Gradients flow through the
// revisions, confidences, recurrence, and the solver chain; the re-warped
// lookup geometry between iterations is treated as data. grads, when
// non-null, is filled aligned with params.items(). Throws NonFiniteLoss with
// a diagnostic summary when the loss leaves the reals.
double training_step_gradients(ParamStore& params,
                               const TrainingSequence& sequence,
                               const TrackerConfig& cfg,
                               const ModelConfig& model,
                               std::vector<Array>* grads);

// Adaptive-moment descent over the dataset, batch = one graph. Checkpoints
// (with the architecture recorded in the manifest) and a text log are
// written per epoch when out_dir is set. Deterministic for a fixed seed.
TrainResult train_toy(ParamStore& params,
                      const std::vector<TrainingSequence>& dataset,
                      const TrackerConfig& cfg, const ModelConfig& model,
                      const TrainOptions& opts);

}  // namespace rodo
