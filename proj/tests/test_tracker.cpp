#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "rodo/errors.hpp"
#include "rodo/evaluation.hpp"
#include "rodo/tracker.hpp"

using namespace rodo;

namespace {

PointCloud random_cloud(std::mt19937_64& rng, int n, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    cloud.points.emplace_back(u(rng), u(rng), u(rng));
    cloud.intensity.push_back(0.3);
    cloud.radial_velocity.push_back(0.0);
  }
  return cloud;
}

SE3 random_pose(std::mt19937_64& rng, double rot, double trans) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Twist xi;
  for (int i = 0; i < 3; ++i) xi[i] = trans * u(rng);
  for (int i = 3; i < 6; ++i) xi[i] = rot * u(rng);
  return SE3::exp(xi);
}

// Desk-scale widths; the production configuration runs in the end-to-end
// acceptance suite.
ModelConfig tiny_model() {
  ModelConfig m;
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
  m.op.lookup.k1 = 4;
  m.op.lookup.k2 = 3;
  m.op.lookup.hidden = 8;
  m.op.lookup.encode_dim = 4;
  return m.sync();
}

ParamStore tiny_params(uint64_t seed = 9) {
  std::mt19937_64 rng(seed);
  ParamStore params;
  init_model(params, tiny_model(), rng);
  return params;
}

void jitter_params(ParamStore& params, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [name, tensor] : params.items())
    for (Eigen::Index i = 0; i < tensor.mutable_values().size(); ++i)
      tensor.mutable_values()[i] += u(rng);
}

TrainingSequence stationary_sequence(std::mt19937_64& rng, int n_points) {
  TrainingSequence seq;
  const PointCloud cloud = random_cloud(rng, n_points, 2.5);
  for (int f = 0; f < kTrainingFrames; ++f) {
    seq.frames.push_back(cloud);
    seq.gt.emplace_back();
  }
  return seq;
}

std::set<std::pair<int, int>> directed_pairs(const FrameGraph& g) {
  std::set<std::pair<int, int>> pairs;
  for (const EdgeState& es : g.edges) pairs.insert({es.a, es.b});
  return pairs;
}

double pose_distance(const SE3& a, const SE3& b) {
  return (a.inverse() * b).log().norm();
}

}  // namespace

TEST_CASE("motion model extrapolates the last relative motion") {
  std::mt19937_64 rng(31);

  // Constant 0.5 m steps keep every composition exact in doubles.
  std::vector<SE3> history;
  for (int k = 0; k < 4; ++k)
    history.push_back(SE3::exp((Twist() << -0.5 * k, 0, 0, 0, 0, 0).finished()));
  const SE3 pred = motion_model_predict(history);
  CHECK(pred.translation().x() == -2.0);
  CHECK(pred.translation().y() == 0.0);
  CHECK(pred.rotation().isApprox(Mat3::Identity(), 1e-15));

  // General case: the predicted step repeats the last relative pose.
  history.clear();
  for (int k = 0; k < 3; ++k) history.push_back(random_pose(rng, 0.5, 1.0));
  const SE3 next = motion_model_predict(history);
  const SE3 last_rel = history[2] * history[1].inverse();
  const SE3 pred_rel = next * history[2].inverse();
  CHECK(pose_distance(pred_rel, last_rel) < 1e-12);

  CHECK(pose_distance(motion_model_predict({history[0]}), history[0]) < 1e-15);
  CHECK_THROWS_AS(motion_model_predict({}), EmptyHistory);
}

TEST_CASE("training graph wiring and initial state") {
  std::mt19937_64 rng(7);
  const ParamStore params = tiny_params();
  const ModelConfig model = tiny_model();
  TrackerConfig cfg;

  TrainingSequence seq;
  for (int f = 0; f < kTrainingFrames; ++f) {
    seq.frames.push_back(random_cloud(rng, 24, 3.0));
    seq.gt.push_back(random_pose(rng, 0.2, 0.5));
  }

  ParamStore mutable_params = params;
  const FrameGraph g = build_training_graph(seq, mutable_params, model, cfg);
  CHECK(g.frame_count() == kTrainingFrames);

  std::set<std::pair<int, int>> expected;
  for (int i = 0; i < kTrainingFrames; ++i)
    for (int j = i + 1; j <= i + cfg.edge_radius && j < kTrainingFrames; ++j) {
      expected.insert({i, j});
      expected.insert({j, i});
    }
  CHECK(expected.size() == 22);
  CHECK(directed_pairs(g) == expected);
  CHECK(g.edge_count() == 22);

  CHECK(g.fixed[0] == 1);
  for (int f = 1; f < kTrainingFrames; ++f) CHECK(g.fixed[f] == 0);
  // Every pose starts at the first frame's ground truth.
  for (int f = 0; f < kTrainingFrames; ++f)
    CHECK(pose_distance(g.poses[f], seq.gt[0]) < 1e-14);

  for (const EdgeState& es : g.edges) {
    // Equal poses warp points onto themselves: zero initial flow.
    CHECK(es.flow.values().abs().maxCoeff() < 1e-12);
    CHECK(es.revision.values().abs().maxCoeff() == 0.0);
    CHECK((es.confidence.values() == 0.5).all());
    const Tensor h0 = initial_hidden(g.context[es.a], model.op.hidden);
    CHECK((es.hidden.values() - h0.values()).abs().maxCoeff() == 0.0);
    CHECK(es.volume.dim(0) == 24);
    CHECK(es.volume.dim(1) == 24);
  }

  seq.frames.pop_back();
  seq.gt.pop_back();
  CHECK_THROWS_AS(build_training_graph(seq, mutable_params, model, cfg),
                  WrongLength);
}

TEST_CASE("tracker runs the documented schedule on a stationary stream") {
  std::mt19937_64 rng(19);
  const ParamStore params = tiny_params();
  TrackerConfig cfg;
  Tracker tracker(params, cfg, tiny_model());

  const PointCloud cloud = random_cloud(rng, 32, 3.0);
  const int total = 14;
  for (int k = 0; k < total; ++k) {
    CHECK(tracker.initialized() == (k >= cfg.window));
    tracker.push(cloud);
    if (k + 1 < cfg.window) {
      CHECK(tracker.trajectory().empty());
      continue;
    }
    const FrameGraph& g = tracker.graph();
    CHECK(g.frame_count() == cfg.window);
    CHECK(g.edge_count() == 26);  // radius-2 pairs over 8 frames, directed
    int anchors = 0;
    for (uint8_t f : g.fixed) anchors += f;
    CHECK(anchors == 1);
    CHECK(g.fixed[0] == 1);
    CHECK(static_cast<int>(tracker.trajectory().size()) ==
          k + 1 - cfg.window);
  }

  const ScheduleStats& stats = tracker.stats();
  CHECK(stats.init_frames == 8);
  CHECK(stats.init_iterations == 12);
  REQUIRE(static_cast<int>(stats.track_iterations.size()) ==
          total - cfg.window);
  for (int n : stats.track_iterations) CHECK(n == 4);
  for (int n : stats.ba_steps_per_iteration) CHECK(n == 2);
  for (int n : stats.window_sizes) CHECK(n == 8);
  CHECK(stats.max_edge_radius == 2);

  tracker.finish();
  CHECK(static_cast<int>(tracker.trajectory().size()) == total);
  // An untrained operator predicts no revision, so a stationary stream from
  // a stationary start never moves.
  for (const SE3& pose : tracker.trajectory())
    CHECK(pose_distance(pose, SE3()) < 1e-9);

  Tracker early(params, cfg, tiny_model());
  early.push(cloud);
  early.push(cloud);
  CHECK_THROWS_AS(early.finish(), InsufficientFrames);
}

TEST_CASE("window removal freezes the departing anchor") {
  std::mt19937_64 rng(23);
  ParamStore params = tiny_params();
  jitter_params(params, rng, 0.05);  // nonzero revisions, nontrivial steps
  TrackerConfig cfg;
  Tracker tracker(params, cfg, tiny_model());

  std::vector<PointCloud> frames;
  for (int k = 0; k < 12; ++k) frames.push_back(random_cloud(rng, 28, 3.0));
  for (int k = 0; k < cfg.window; ++k) tracker.push(frames[k]);

  for (int k = cfg.window; k < 12; ++k) {
    // The current anchor is fixed, so the next update may not move it; it is
    // emitted bit-identically when it leaves the window.
    const SE3 anchor = tracker.graph().poses[0];
    tracker.push(frames[k]);
    const SE3& emitted = tracker.trajectory().back();
    CHECK((emitted.matrix() - anchor.matrix()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(tracker.graph().fixed[0] == 1);

    std::set<std::pair<int, int>> expected;
    for (int i = 0; i < cfg.window; ++i)
      for (int j = i + 1; j <= i + cfg.edge_radius && j < cfg.window; ++j) {
        expected.insert({i, j});
        expected.insert({j, i});
      }
    CHECK(directed_pairs(tracker.graph()) == expected);
    for (const StepDiagnostics& d : tracker.diagnostics())
      CHECK(std::isfinite(d.step_norm));
  }
  tracker.finish();
  CHECK(static_cast<int>(tracker.trajectory().size()) == 12);
}

TEST_CASE("a stationary ground-truth sequence is already at zero loss") {
  std::mt19937_64 rng(11);
  ParamStore params = tiny_params();
  TrackerConfig cfg;
  cfg.train_unroll = 3;

  const TrainingSequence seq = stationary_sequence(rng, 20);
  std::vector<Array> grads;
  const double loss =
      training_step_gradients(params, seq, cfg, tiny_model(), &grads);
  CHECK(loss < 1e-18);
  for (const Array& g : grads) CHECK(g.isFinite().all());
}

TEST_CASE("training step gradients match finite differences") {
  std::mt19937_64 rng(67);
  ParamStore params = tiny_params(41);
  jitter_params(params, rng, 0.1);
  const ModelConfig model = tiny_model();
  TrackerConfig cfg;
  // One iteration: with constant initial poses the model is smooth in every
  // weight, so central differences see the exact tape gradient. Deeper
  // unrolls re-warp from optimized poses, which the tape treats as data.
  cfg.train_unroll = 1;

  TrainingSequence seq;
  SE3 pose;
  for (int f = 0; f < kTrainingFrames; ++f) {
    seq.frames.push_back(random_cloud(rng, 16, 2.5));
    pose = random_pose(rng, 0.05, 0.1) * pose;
    seq.gt.push_back(pose);
  }

  std::vector<Array> grads;
  const double loss =
      training_step_gradients(params, seq, cfg, model, &grads);
  CHECK(std::isfinite(loss));

  double grad_scale = 0.0;
  for (const Array& g : grads)
    if (g.size()) grad_scale = std::max(grad_scale, g.abs().maxCoeff());
  CHECK(grad_scale > 0.0);

  // A couple of coordinates of every parameter tensor, probed centrally
  // through the full segmented pipeline.
  const double h = 1e-5;
  auto& items = params.items();
  double worst = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Array& values = items[i].second.mutable_values();
    for (Eigen::Index j = 0; j < values.size();
         j += std::max<Eigen::Index>(1, values.size() - 1)) {
      const double saved = values[j];
      values[j] = saved + h;
      const double up =
          training_step_gradients(params, seq, cfg, model, nullptr);
      values[j] = saved - h;
      const double down =
          training_step_gradients(params, seq, cfg, model, nullptr);
      values[j] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(fd - grads[i][j]) /
                         std::max({1e-3 * grad_scale, std::abs(fd),
                                   std::abs(grads[i][j])});
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 2e-4);
}

TEST_CASE("segmented training backward matches one full tape") {
  std::mt19937_64 rng(67);
  ParamStore params = tiny_params(41);
  jitter_params(params, rng, 0.1);
  const ModelConfig model = tiny_model();
  TrackerConfig cfg;
  cfg.train_unroll = 3;

  TrainingSequence seq;
  SE3 pose;
  for (int f = 0; f < kTrainingFrames; ++f) {
    seq.frames.push_back(random_cloud(rng, 16, 2.5));
    pose = random_pose(rng, 0.05, 0.1) * pose;
    seq.gt.push_back(pose);
  }

  std::vector<Array> seg_grads;
  const double seg_loss =
      training_step_gradients(params, seq, cfg, model, &seg_grads);

  // Reference: the identical computation recorded on a single tape.
  ModelConfig m = model;
  m.sync();
  m.op.ba_per_iter = cfg.ba_steps;
  Tape tape;
  FrameGraph graph = build_training_graph(seq, params, m, cfg);
  IterationState st = gather_state(graph, m.op);
  for (int k = 0; k < cfg.train_unroll; ++k)
    st = run_iteration(graph, params, m.op, st);
  const Tensor loss = pose_loss(st.poses, seq.gt);
  tape.backward(loss);

  CHECK(loss.item() == seg_loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    const Array full = tape.grad(params.items()[i].second);
    const double diff = (full - seg_grads[i]).abs().maxCoeff();
    worst = std::max(worst, diff / std::max(1.0, full.abs().maxCoeff()));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("toy training is deterministic and checkpoints every epoch") {
  std::mt19937_64 rng(3);
  const ModelConfig model = tiny_model();
  TrackerConfig cfg;
  cfg.train_unroll = 2;

  std::vector<TrainingSequence> dataset;
  dataset.push_back(stationary_sequence(rng, 18));
  {
    TrainingSequence moving;
    SE3 pose;
    for (int f = 0; f < kTrainingFrames; ++f) {
      moving.frames.push_back(random_cloud(rng, 18, 2.5));
      pose = random_pose(rng, 0.02, 0.05) * pose;
      moving.gt.push_back(pose);
    }
    dataset.push_back(moving);
  }

  TrainOptions opts;
  opts.epochs = 2;
  opts.lr = 1e-3;
  opts.seed = 17;
  opts.out_dir = std::filesystem::temp_directory_path() / "rodo_train_test";
  std::filesystem::remove_all(opts.out_dir);

  ParamStore run_a = tiny_params(5);
  const TrainResult a = train_toy(run_a, dataset, cfg, model, opts);
  REQUIRE(a.step_loss.size() == 4);
  REQUIRE(a.epoch_loss.size() == 2);
  REQUIRE(a.checkpoints.size() == 2);
  for (const auto& file : a.checkpoints) CHECK(std::filesystem::exists(file));
  CHECK(std::filesystem::exists(opts.out_dir / "train_log.txt"));

  std::string meta;
  const ParamStore restored = load_checkpoint(a.checkpoints.back(), &meta);
  CHECK(restored.total_size() == run_a.total_size());
  CHECK(meta.find("\"epoch\":2") != std::string::npos);

  ParamStore run_b = tiny_params(5);
  const TrainResult b = train_toy(run_b, dataset, cfg, model, opts);
  REQUIRE(b.step_loss.size() == a.step_loss.size());
  for (std::size_t i = 0; i < a.step_loss.size(); ++i)
    CHECK(a.step_loss[i] == b.step_loss[i]);

  // Weights actually moved.
  bool changed = false;
  const ParamStore fresh = tiny_params(5);
  for (std::size_t i = 0; i < fresh.items().size(); ++i)
    changed |= (run_a.items()[i].second.values() !=
                fresh.items()[i].second.values())
                   .any();
  CHECK(changed);

  // Zero epochs: nothing happens, weights untouched.
  ParamStore idle = tiny_params(5);
  TrainOptions none = opts;
  none.epochs = 0;
  none.out_dir.clear();
  const TrainResult empty = train_toy(idle, dataset, cfg, model, none);
  CHECK(empty.step_loss.empty());
  CHECK(empty.epoch_loss.empty());
  for (std::size_t i = 0; i < fresh.items().size(); ++i)
    CHECK((idle.items()[i].second.values() ==
           fresh.items()[i].second.values())
              .all());
  std::filesystem::remove_all(opts.out_dir);
}

TEST_CASE("a diverging loss aborts training with context") {
  std::mt19937_64 rng(29);
  const ModelConfig model = tiny_model();
  TrackerConfig cfg;
  cfg.train_unroll = 1;

  TrainingSequence seq = stationary_sequence(rng, 16);
  // An absurd reference translation overflows the squared pose loss.
  seq.gt[3] = SE3::exp((Twist() << 1e200, 0, 0, 0, 0, 0).finished());

  TrainOptions opts;
  opts.epochs = 1;
  opts.seed = 2;
  opts.out_dir = std::filesystem::temp_directory_path() / "rodo_train_abort";
  std::filesystem::remove_all(opts.out_dir);

  ParamStore params = tiny_params(5);
  bool thrown = false;
  try {
    train_toy(params, {seq}, cfg, model, opts);
  } catch (const NonFiniteLoss& e) {
    thrown = true;
    CHECK(std::string(e.what()).find("sequence 0") != std::string::npos);
  }
  CHECK(thrown);
  CHECK(std::filesystem::exists(opts.out_dir / "failure_dump.txt"));
  std::filesystem::remove_all(opts.out_dir);
}
