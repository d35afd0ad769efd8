#include "rodo/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rodo/evaluation.hpp"
#include "rodo/ops.hpp"

namespace rodo {

namespace {

// Appends the directed edge a -> b with its correlation volume and fresh
// per-edge state (pose-consistent flow, h0 from the source context).
void add_edge(FrameGraph& g, int a, int b, const OperatorConfig& op,
              ScheduleStats* stats) {
  EdgeState es;
  es.a = a;
  es.b = b;
  es.volume = build_volume(g.features[a], g.features[b]);
  g.edges.push_back(std::move(es));
  init_edge_state(g, g.edge_count() - 1, op);
  if (stats)
    stats->max_edge_radius =
        std::max(stats->max_edge_radius, std::abs(g.ids[a] - g.ids[b]));
}

Tensor leaf_like(const Tensor& t) {
  Tensor copy(t.shape(), t.values());
  copy.set_requires_grad(true);
  return copy;
}

// sum(out * seed): a scalar whose gradient wrt `out` is exactly `seed`,
// used to chain cotangents between recomputed tape segments.
Tensor seeded(const Tensor& out, const Array& seed) {
  return sum(mul(out, Tensor(out.shape(), seed)));
}

std::string step_summary(const std::vector<StepDiagnostics>& steps) {
  std::ostringstream os;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) os << "; ";
    os << "cost=" << steps[i].cost_before << " step=" << steps[i].step_norm
       << " damping=" << steps[i].damping_used;
  }
  return os.str();
}

}  // namespace

void init_model(ParamStore& params, const ModelConfig& cfg,
                std::mt19937_64& rng) {
  init_backbone(params, "feature", cfg.backbone, rng);
  init_backbone(params, "context", cfg.backbone, rng);
  init_lookup(params, cfg.op.lookup_prefix, cfg.op.lookup, rng);
  init_operator(params, cfg.op.prefix, cfg.op, rng);
}

std::string model_metadata_json(const ModelConfig& model,
                                const TrackerConfig& cfg) {
  ModelConfig m = model;
  m.sync();
  const nlohmann::json meta{
      {"model",
       {{"backbone",
         {{"radii", m.backbone.radii},
          {"ball_samples", m.backbone.ball_samples},
          {"scale_dim", m.backbone.scale_dim},
          {"scale_hidden", m.backbone.scale_hidden},
          {"embed_hidden", m.backbone.embed_hidden},
          {"embed_dim", m.backbone.embed_dim},
          {"clusters", m.backbone.clusters},
          {"center_k", m.backbone.center_k},
          {"out_dim", m.backbone.out_dim}}},
        {"operator",
         {{"hidden", m.op.hidden},
          {"flow_dim", m.op.flow_dim},
          {"head_hidden", m.op.head_hidden},
          {"context_dim", m.op.context_dim},
          {"lookup_k1", m.op.lookup.k1},
          {"lookup_k2", m.op.lookup.k2},
          {"lookup_hidden", m.op.lookup.hidden},
          {"lookup_encode_dim", m.op.lookup.encode_dim}}}}},
      {"schedule",
       {{"window", cfg.window},
        {"init_iterations", cfg.init_iterations},
        {"track_iterations", cfg.track_iterations},
        {"ba_steps", cfg.ba_steps},
        {"edge_radius", cfg.edge_radius},
        {"train_unroll", cfg.train_unroll}}}};
  return meta.dump();
}

ModelConfig model_from_metadata(const std::string& metadata_json,
                                TrackerConfig* schedule) {
  ModelConfig m;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("unreadable checkpoint metadata: ") + e.what());
  }
  const nlohmann::json model = meta.value("model", nlohmann::json::object());
  const nlohmann::json bb = model.value("backbone", nlohmann::json::object());
  m.backbone.radii = bb.value("radii", m.backbone.radii);
  m.backbone.ball_samples = bb.value("ball_samples", m.backbone.ball_samples);
  m.backbone.scale_dim = bb.value("scale_dim", m.backbone.scale_dim);
  m.backbone.scale_hidden = bb.value("scale_hidden", m.backbone.scale_hidden);
  m.backbone.embed_hidden = bb.value("embed_hidden", m.backbone.embed_hidden);
  m.backbone.embed_dim = bb.value("embed_dim", m.backbone.embed_dim);
  m.backbone.clusters = bb.value("clusters", m.backbone.clusters);
  m.backbone.center_k = bb.value("center_k", m.backbone.center_k);
  m.backbone.out_dim = bb.value("out_dim", m.backbone.out_dim);
  const nlohmann::json op = model.value("operator", nlohmann::json::object());
  m.op.hidden = op.value("hidden", m.op.hidden);
  m.op.flow_dim = op.value("flow_dim", m.op.flow_dim);
  m.op.head_hidden = op.value("head_hidden", m.op.head_hidden);
  m.op.lookup.k1 = op.value("lookup_k1", m.op.lookup.k1);
  m.op.lookup.k2 = op.value("lookup_k2", m.op.lookup.k2);
  m.op.lookup.hidden = op.value("lookup_hidden", m.op.lookup.hidden);
  m.op.lookup.encode_dim = op.value("lookup_encode_dim", m.op.lookup.encode_dim);
  m.sync();
  if (schedule) {
    const nlohmann::json sch = meta.value("schedule", nlohmann::json::object());
    schedule->window = sch.value("window", schedule->window);
    schedule->init_iterations =
        sch.value("init_iterations", schedule->init_iterations);
    schedule->track_iterations =
        sch.value("track_iterations", schedule->track_iterations);
    schedule->ba_steps = sch.value("ba_steps", schedule->ba_steps);
    schedule->edge_radius = sch.value("edge_radius", schedule->edge_radius);
    schedule->train_unroll = sch.value("train_unroll", schedule->train_unroll);
  }
  return m;
}

void attach_frame_caches(FrameGraph& graph, int frame_index,
                         const ParamStore& params, const ModelConfig& cfg) {
  if (static_cast<int>(graph.features.size()) <= frame_index)
    graph.features.resize(frame_index + 1);
  if (static_cast<int>(graph.context.size()) <= frame_index)
    graph.context.resize(frame_index + 1);
  const PointCloud& cloud = graph.clouds[frame_index];
  graph.features[frame_index] =
      extract_features(params, "feature", cfg.backbone, cloud).out;
  graph.context[frame_index] =
      extract_features(params, "context", cfg.backbone, cloud).out;
}

SE3 motion_model_predict(const std::vector<SE3>& history) {
  if (history.empty())
    throw EmptyHistory("motion model called with an empty pose history");
  if (history.size() == 1) return history.back();
  const SE3& last = history[history.size() - 1];
  const SE3& prev = history[history.size() - 2];
  return (last * prev.inverse()) * last;
}

FrameGraph build_training_graph(const TrainingSequence& sequence,
                                const ParamStore& params,
                                const ModelConfig& cfg,
                                const TrackerConfig& tracker_cfg) {
  if (static_cast<int>(sequence.frames.size()) != kTrainingFrames ||
      static_cast<int>(sequence.gt.size()) != kTrainingFrames) {
    std::ostringstream os;
    os << "training sequence needs exactly " << kTrainingFrames
       << " frames with ground truth, got " << sequence.frames.size()
       << " frames / " << sequence.gt.size() << " poses";
    throw WrongLength(os.str());
  }
  ModelConfig model = cfg;
  model.sync();

  FrameGraph g;
  for (int f = 0; f < kTrainingFrames; ++f) {
    g.ids.push_back(f);
    g.clouds.push_back(sequence.frames[f]);
    // Every pose starts at the first frame's ground truth; only frame 0 is
    // pinned there.
    g.poses.push_back(sequence.gt[0]);
    g.fixed.push_back(f == 0 ? 1 : 0);
    attach_frame_caches(g, f, params, model);
  }
  for (int i = 0; i < kTrainingFrames; ++i) {
    for (int d = 1; d <= tracker_cfg.edge_radius; ++d) {
      const int j = i + d;
      if (j >= kTrainingFrames) break;
      add_edge(g, i, j, model.op, nullptr);
      add_edge(g, j, i, model.op, nullptr);
    }
  }
  return g;
}

// --- Tracker ---

Tracker::Tracker(const ParamStore& params, TrackerConfig cfg, ModelConfig model)
    : params_(params), cfg_(cfg), model_(model) {
  model_.sync();
  model_.op.ba_per_iter = cfg_.ba_steps;
}

void Tracker::push(const PointCloud& frame) {
  if (!initialized_) {
    pending_.push_back(frame);
    if (static_cast<int>(pending_.size()) == cfg_.window) initialize_window();
    return;
  }
  track(frame);
}

void Tracker::add_frame(const PointCloud& frame, const SE3& pose) {
  const int f = graph_.frame_count();
  graph_.ids.push_back(next_id_++);
  graph_.clouds.push_back(frame);
  graph_.poses.push_back(pose);
  graph_.fixed.push_back(0);
  attach_frame_caches(graph_, f, params_, model_);
  for (int d = 1; d <= cfg_.edge_radius; ++d) {
    const int g = f - d;
    if (g < 0) break;
    add_edge(graph_, g, f, model_.op, &stats_);
    add_edge(graph_, f, g, model_.op, &stats_);
  }
}

void Tracker::initialize_window() {
  // The first window starts stationary: all frames at the first pose, which
  // also anchors the world frame.
  for (const PointCloud& frame : pending_) add_frame(frame, SE3());
  pending_.clear();
  graph_.fixed[0] = 1;
  stats_.init_frames = graph_.frame_count();

  const std::size_t before = diags_.size();
  iterate(graph_, params_, model_.op, cfg_.init_iterations, &diags_);
  stats_.init_iterations = static_cast<int>(diags_.size() - before) /
                           std::max(1, model_.op.ba_per_iter);
  initialized_ = true;
}

void Tracker::track(const PointCloud& frame) {
  add_frame(frame, motion_model_predict(graph_.poses));
  const std::size_t before = diags_.size();
  iterate(graph_, params_, model_.op, cfg_.track_iterations, &diags_);
  const int steps = static_cast<int>(diags_.size() - before);
  stats_.track_iterations.push_back(steps / std::max(1, model_.op.ba_per_iter));
  stats_.ba_steps_per_iteration.push_back(steps /
                                          std::max(1, cfg_.track_iterations));
  remove_oldest();
  stats_.window_sizes.push_back(graph_.frame_count());
}

void Tracker::remove_oldest() {
  trajectory_.push_back(graph_.poses.front());
  graph_.ids.erase(graph_.ids.begin());
  graph_.clouds.erase(graph_.clouds.begin());
  graph_.poses.erase(graph_.poses.begin());
  graph_.fixed.erase(graph_.fixed.begin());
  graph_.features.erase(graph_.features.begin());
  graph_.context.erase(graph_.context.begin());
  std::vector<EdgeState> kept;
  for (EdgeState& es : graph_.edges) {
    if (es.a == 0 || es.b == 0) continue;
    --es.a;
    --es.b;
    kept.push_back(std::move(es));
  }
  graph_.edges = std::move(kept);
  // The oldest surviving frame becomes the gauge anchor at its estimate.
  graph_.fixed.front() = 1;
}

void Tracker::finish() {
  if (!initialized_) {
    std::ostringstream os;
    os << "stream ended after " << pending_.size()
       << " frames; initialization needs " << cfg_.window;
    throw InsufficientFrames(os.str());
  }
  for (const SE3& pose : graph_.poses) trajectory_.push_back(pose);
  graph_ = FrameGraph{};
}

// --- training ---

double training_step_gradients(ParamStore& params,
                               const TrainingSequence& sequence,
                               const TrackerConfig& cfg,
                               const ModelConfig& model,
                               std::vector<Array>* grads) {
  ModelConfig m = model;
  m.sync();
  m.op.ba_per_iter = cfg.ba_steps;

  // Values-only forward (no tape is active), keeping the per-iteration
  // boundary states so each segment can be recomputed on its own tape.
  FrameGraph graph = build_training_graph(sequence, params, m, cfg);
  const int frames = graph.frame_count();
  const int edges = graph.edge_count();

  std::vector<IterationState> bounds;
  bounds.push_back(gather_state(graph, m.op));
  for (int k = 0; k < cfg.train_unroll; ++k)
    bounds.push_back(run_iteration(graph, params, m.op, bounds.back()));

  double loss = 0.0;
  Array gpose;
  {
    Tape tape;
    Tensor pose_leaf = leaf_like(bounds.back().poses);
    Tensor l = pose_loss(pose_leaf, sequence.gt);
    loss = l.item();
    if (!std::isfinite(loss))
      throw NonFiniteLoss("pose loss is not finite; last iteration: " +
                          step_summary(bounds.back().steps));
    if (!grads) return loss;
    tape.backward(l);
    gpose = tape.grad(pose_leaf);
  }

  // Frame/edge caches become shared leaves so every segment routes its
  // gradient contribution into the same accumulators.
  FrameGraph seg = graph;
  std::vector<Tensor> ctx_leaf(frames), feat_leaf(frames);
  for (int f = 0; f < frames; ++f) {
    ctx_leaf[f] = leaf_like(graph.context[f]);
    feat_leaf[f] = leaf_like(graph.features[f]);
    seg.context[f] = ctx_leaf[f];
  }
  std::vector<Tensor> vol_leaf(edges);
  for (int e = 0; e < edges; ++e) {
    vol_leaf[e] = leaf_like(graph.edges[e].volume);
    seg.edges[e].volume = vol_leaf[e];
  }

  auto& items = params.items();
  const int n_params = static_cast<int>(items.size());
  grads->assign(n_params, Array());
  for (int i = 0; i < n_params; ++i) {
    items[i].second.set_requires_grad(true);
    (*grads)[i] = Array::Zero(items[i].second.size());
  }
  auto accumulate_params = [&](Tape& tape) {
    for (int i = 0; i < n_params; ++i)
      if (tape.has_grad(items[i].second))
        (*grads)[i] += tape.grad(items[i].second);
  };

  Array ghidden = Array::Zero(bounds[0].hidden.size());
  std::vector<Array> gflow(edges), gctx(frames), gvol(edges), gfeat(frames);
  for (int e = 0; e < edges; ++e) {
    gflow[e] = Array::Zero(bounds[0].flows[e].size());
    gvol[e] = Array::Zero(vol_leaf[e].size());
  }
  for (int f = 0; f < frames; ++f) gctx[f] = Array::Zero(ctx_leaf[f].size());

  // Iteration segments, newest first. Each recomputes bit-identically from
  // its boundary state, so the chained cotangents are exact.
  for (int k = cfg.train_unroll; k >= 1; --k) {
    Tape tape;
    IterationState in;
    in.poses = leaf_like(bounds[k - 1].poses);
    in.hidden = leaf_like(bounds[k - 1].hidden);
    for (int e = 0; e < edges; ++e)
      in.flows.push_back(leaf_like(bounds[k - 1].flows[e]));

    IterationState out = run_iteration(seg, params, m.op, in);

    Tensor surrogate = add(seeded(out.poses, gpose), seeded(out.hidden, ghidden));
    for (int e = 0; e < edges; ++e)
      surrogate = add(surrogate, seeded(out.flows[e], gflow[e]));
    tape.backward(surrogate);

    gpose = tape.grad(in.poses);
    ghidden = tape.grad(in.hidden);
    for (int e = 0; e < edges; ++e) gflow[e] = tape.grad(in.flows[e]);
    for (int f = 0; f < frames; ++f) gctx[f] += tape.grad(ctx_leaf[f]);
    for (int e = 0; e < edges; ++e) gvol[e] += tape.grad(vol_leaf[e]);
    accumulate_params(tape);
  }

  // Initial recurrent state: h0 = tanh(context slice) per edge. Initial
  // flows and poses are pose-consistent constants and carry no gradient.
  {
    Tape tape;
    std::vector<Tensor> h0;
    for (int e = 0; e < edges; ++e)
      h0.push_back(initial_hidden(ctx_leaf[seg.edges[e].a], m.op.hidden));
    tape.backward(seeded(concat(h0, 0), ghidden));
    for (int f = 0; f < frames; ++f) gctx[f] += tape.grad(ctx_leaf[f]);
  }

  // Correlation volumes from the matching features.
  {
    Tape tape;
    Tensor surrogate;
    for (int e = 0; e < edges; ++e) {
      const Tensor v =
          build_volume(feat_leaf[seg.edges[e].a], feat_leaf[seg.edges[e].b]);
      const Tensor s = seeded(v, gvol[e]);
      surrogate = e == 0 ? s : add(surrogate, s);
    }
    tape.backward(surrogate);
    for (int f = 0; f < frames; ++f) gfeat[f] = tape.grad(feat_leaf[f]);
  }

  // Backbone, one frame per tape (both roles share the segment).
  for (int f = 0; f < frames; ++f) {
    Tape tape;
    const FeatureSet fs =
        extract_features(params, "feature", m.backbone, graph.clouds[f]);
    const FeatureSet cs =
        extract_features(params, "context", m.backbone, graph.clouds[f]);
    tape.backward(add(seeded(fs.out, gfeat[f]), seeded(cs.out, gctx[f])));
    accumulate_params(tape);
  }

  return loss;
}

TrainResult train_toy(ParamStore& params,
                      const std::vector<TrainingSequence>& dataset,
                      const TrackerConfig& cfg, const ModelConfig& model,
                      const TrainOptions& opts) {
  TrainResult result;
  if (opts.epochs <= 0 || dataset.empty()) return result;

  std::vector<int> milestones = opts.milestones;
  if (milestones.empty())
    milestones = {(opts.epochs + 2) / 3, (2 * opts.epochs + 2) / 3};

  auto& items = params.items();
  const int n_params = static_cast<int>(items.size());
  std::vector<Array> m1(n_params), m2(n_params);
  for (int i = 0; i < n_params; ++i) {
    m1[i] = Array::Zero(items[i].second.size());
    m2[i] = Array::Zero(items[i].second.size());
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log.open(opts.out_dir / "train_log.txt");
  }

  ModelConfig m = model;
  m.sync();
  nlohmann::json meta = nlohmann::json::parse(model_metadata_json(m, cfg));
  meta["lr"] = opts.lr;
  meta["seed"] = opts.seed;

  std::mt19937_64 rng(opts.seed);
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    double lr = opts.lr;
    for (int milestone : milestones)
      if (epoch > milestone) lr *= 0.1;

    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_sum = 0.0;
    for (int idx : order) {
      std::vector<Array> grads;
      double loss = 0.0;
      try {
        loss = training_step_gradients(params, dataset[idx], cfg, m, &grads);
      } catch (const NonFiniteLoss& e) {
        std::ostringstream os;
        os << "epoch " << epoch << " sequence " << idx << ": " << e.what();
        if (log.is_open()) {
          log << "abort: " << os.str() << "\n";
          std::ofstream dump(opts.out_dir / "failure_dump.txt");
          dump << os.str() << "\nsteps so far:";
          for (double l : result.step_loss) dump << " " << l;
          dump << "\n";
        }
        throw NonFiniteLoss(os.str());
      }

      ++step;
      const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (int i = 0; i < n_params; ++i) {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * grads[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * grads[i].square();
        items[i].second.mutable_values() -=
            lr * (m1[i] / corr1) / ((m2[i] / corr2).sqrt() + eps);
      }
      result.step_loss.push_back(loss);
      epoch_sum += loss;
    }

    result.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));
    if (log.is_open())
      log << "epoch " << epoch << " mean_loss " << result.epoch_loss.back()
          << " lr " << lr << std::endl;
    if (!opts.out_dir.empty()) {
      meta["epoch"] = epoch;
      meta["mean_loss"] = result.epoch_loss.back();
      const std::filesystem::path file =
          opts.out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(file, params, meta.dump());
      result.checkpoints.push_back(file);
    }
  }
  return result;
}

}  // namespace rodo
