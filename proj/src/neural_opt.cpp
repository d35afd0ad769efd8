#include "rodo/neural_opt.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include "rodo/nn.hpp"
#include "rodo/ops.hpp"

namespace rodo {

namespace {

using Data = std::shared_ptr<detail::TensorData>;
using Mat312 = Eigen::Matrix<double, 3, 12>;
using Mat1212 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

Tensor cloud_tensor(const PointCloud& cloud) {
  const int n = static_cast<int>(cloud.points.size());
  Tensor out({n, 3}, 0.0);
  for (int i = 0; i < n; ++i) {
    out.mutable_values()[i * 3 + 0] = cloud.points[i].x();
    out.mutable_values()[i * 3 + 1] = cloud.points[i].y();
    out.mutable_values()[i * 3 + 2] = cloud.points[i].z();
  }
  return out;
}

Eigen::MatrixX3d as_points(const Array& values, int rows) {
  Eigen::MatrixX3d out(rows, 3);
  for (int i = 0; i < rows; ++i)
    out.row(i) << values[i * 3 + 0], values[i * 3 + 1], values[i * 3 + 2];
  return out;
}

}  // namespace

void init_operator(ParamStore& params, const std::string& prefix,
                   const OperatorConfig& cfg, std::mt19937_64& rng) {
  init_linear(params, prefix + ".flow.l0", 3, cfg.flow_dim, rng);
  init_linear(params, prefix + ".flow.l1", cfg.flow_dim, cfg.flow_dim, rng);
  const int gru_in = cfg.hidden + cfg.motion_width();
  init_linear(params, prefix + ".gru.z", gru_in, cfg.hidden, rng);
  init_linear(params, prefix + ".gru.r", gru_in, cfg.hidden, rng);
  init_linear(params, prefix + ".gru.h", gru_in, cfg.hidden, rng);
  for (const char* head : {".rev", ".conf"}) {
    init_linear(params, prefix + head + ".l0", cfg.hidden, cfg.head_hidden,
                rng);
    init_linear(params, prefix + head + ".l1", cfg.head_hidden,
                cfg.head_hidden, rng);
    init_linear(params, prefix + head + ".out", cfg.head_hidden, 3, rng);
    // Zeroed output layers: the first pass predicts no revision and uniform
    // 0.5 confidences, so an untrained operator is a damped ICP-like solver.
    params.at(prefix + head + ".out.weight").mutable_values().setZero();
  }
}

Tensor encode_motion(const ParamStore& params, const std::string& prefix,
                     const Tensor& corr, const Tensor& context,
                     const Tensor& flow) {
  Tensor enc = apply_linear(params, prefix + ".flow.l1",
                            relu(apply_linear(params, prefix + ".flow.l0",
                                              flow)));
  return concat({corr, context, enc}, 1);
}

Tensor gru_update(const ParamStore& params, const std::string& prefix,
                  const Tensor& h, const Tensor& motion) {
  const Tensor joint = concat({h, motion}, 1);
  const Tensor z = sigmoid(apply_linear(params, prefix + ".gru.z", joint));
  const Tensor r = sigmoid(apply_linear(params, prefix + ".gru.r", joint));
  const Tensor cand = tanh_op(apply_linear(params, prefix + ".gru.h",
                                           concat({mul(r, h), motion}, 1)));
  // (1-z) h + z cand, associated as h + z (cand - h)
  return add(h, mul(z, sub(cand, h)));
}

HeadOutput predict_heads(const ParamStore& params, const std::string& prefix,
                         const Tensor& h) {
  auto trunk = [&](const std::string& head) {
    Tensor t = relu(apply_linear(params, prefix + head + ".l0", h));
    return relu(apply_linear(params, prefix + head + ".l1", t));
  };
  HeadOutput out;
  out.revision = apply_linear(params, prefix + ".rev.out", trunk(".rev"));
  out.confidence =
      sigmoid(apply_linear(params, prefix + ".conf.out", trunk(".conf")));
  return out;
}

Tensor initial_hidden(const Tensor& context, int hidden) {
  if (context.cols() < hidden)
    throw ShapeMismatch("initial_hidden: context narrower than the state");
  return tanh_op(slice(context, 1, 0, hidden));
}

// --- Gauss-Newton core ---

void linearize_edge(const SE3& ta, const SE3& tb, EdgeTerms& terms) {
  const int n = static_cast<int>(terms.points.rows());
  if (terms.target.rows() != n || terms.weight.rows() != n)
    throw ShapeMismatch("linearize_edge: target/weight rows");
  const SE3 t12 = tb * ta.inverse();
  const Mat6 adj = t12.adjoint();
  terms.residual.resize(n, 3);
  terms.j1.resize(n);
  terms.j2.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 g = t12 * Vec3(terms.points.row(i));
    terms.residual.row(i) = terms.target.row(i) - g.transpose();
    Eigen::Matrix<double, 3, 6> j2;
    j2.leftCols<3>() = -Mat3::Identity();
    j2.rightCols<3>() = hat(g);
    terms.j2[i] = j2;
    terms.j1[i] = -j2 * adj;
  }
}

NormalEquations assemble(const std::vector<EdgeTerms>& terms,
                         const std::vector<uint8_t>& fixed, int frame_count) {
  NormalEquations neq;
  neq.free_block.assign(frame_count, -1);
  for (int f = 0; f < frame_count; ++f)
    if (!fixed[f]) neq.free_block[f] = neq.free_frames++;
  if (neq.free_frames == 0)
    throw AllFramesFixed("assemble: no free frame to optimize");
  const int dim = 6 * neq.free_frames;
  neq.h = Eigen::MatrixXd::Zero(dim, dim);
  neq.b = Eigen::VectorXd::Zero(dim);
  for (const EdgeTerms& e : terms) {
    Mat1212 h12 = Mat1212::Zero();
    Vec12 b12 = Vec12::Zero();
    const int n = static_cast<int>(e.residual.rows());
    for (int i = 0; i < n; ++i) {
      Mat312 a;
      a.leftCols<6>() = e.j1[i];
      a.rightCols<6>() = e.j2[i];
      const Vec3 w = e.weight.row(i);
      const Vec3 r = e.residual.row(i);
      h12.noalias() += a.transpose() * (w.asDiagonal() * a);
      b12.noalias() -= a.transpose() * w.cwiseProduct(r);
    }
    const int ba = neq.free_block[e.a];
    const int bb = neq.free_block[e.b];
    if (ba >= 0) {
      neq.h.block<6, 6>(6 * ba, 6 * ba) += h12.block<6, 6>(0, 0);
      neq.b.segment<6>(6 * ba) += b12.head<6>();
    }
    if (bb >= 0) {
      neq.h.block<6, 6>(6 * bb, 6 * bb) += h12.block<6, 6>(6, 6);
      neq.b.segment<6>(6 * bb) += b12.tail<6>();
    }
    if (ba >= 0 && bb >= 0) {
      neq.h.block<6, 6>(6 * ba, 6 * bb) += h12.block<6, 6>(0, 6);
      neq.h.block<6, 6>(6 * bb, 6 * ba) += h12.block<6, 6>(6, 0);
    }
  }
  // a^T diag(w) a rounds asymmetrically; restore exact symmetry.
  neq.h = 0.5 * (neq.h + neq.h.transpose()).eval();
  return neq;
}

Eigen::VectorXd solve_normal_equations(const NormalEquations& neq,
                                       double lambda, double lambda_max,
                                       double* lambda_used) {
  if (lambda_used) *lambda_used = lambda;
  // All weights zero: the damped system is 0 = 0 with unique minimum-norm
  // solution 0 (no pose information in this step).
  if (neq.h.lpNorm<Eigen::Infinity>() == 0.0 &&
      neq.b.lpNorm<Eigen::Infinity>() == 0.0)
    return Eigen::VectorXd::Zero(neq.b.size());
  const Eigen::VectorXd diag = neq.h.diagonal();
  const double b_norm = neq.b.lpNorm<Eigen::Infinity>();
  double lam = lambda;
  while (true) {
    Eigen::MatrixXd damped = neq.h;
    damped.diagonal() += lam * diag;
    Eigen::LLT<Eigen::MatrixXd> llt(damped);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd dxi = llt.solve(neq.b);
      const double err = (damped * dxi - neq.b).lpNorm<Eigen::Infinity>();
      if (err < 1e-10 * (1.0 + b_norm)) {
        if (lambda_used) *lambda_used = lam;
        return dxi;
      }
    }
    if (lam >= lambda_max)
      throw NotPositiveDefinite(
          "normal equations unsolvable at maximum damping");
    lam = lam == 0.0 ? 1e-6 : lam * 10.0;
    lam = std::min(lam, lambda_max);
  }
}

namespace {

// Everything the adjoint pass needs to rebuild the linearization exactly.
struct AmbaCache {
  std::vector<int> edge_a, edge_b;
  std::vector<Eigen::MatrixX3d> points;
  std::vector<Data> target, weight;
  std::vector<uint8_t> fixed;
  Array pose_in, pose_out;
  Eigen::VectorXd dxi;
  double lambda_used = 0.0;
  bool skipped = false;  // all-zero system, no solve ran
  int frames = 0;
};

std::vector<Array> amba_backward(const std::shared_ptr<AmbaCache>& c,
                                 const Array& gout) {
  const int frames = c->frames;
  const int edge_count = static_cast<int>(c->edge_a.size());
  std::vector<SE3> pin(frames), pout(frames);
  for (int f = 0; f < frames; ++f) {
    pin[f] = pose_from_row(c->pose_in.data() + 12 * f);
    pout[f] = pose_from_row(c->pose_out.data() + 12 * f);
  }

  // Output tangent gradients, then the retraction/pass-through split.
  std::vector<int> free_block(frames, -1);
  int free_frames = 0;
  for (int f = 0; f < frames; ++f)
    if (!c->fixed[f]) free_block[f] = free_frames++;
  std::vector<Twist> tau_edge(frames, Twist::Zero());
  Eigen::VectorXd gxi = Eigen::VectorXd::Zero(6 * free_frames);
  std::vector<Twist> tau_pass(frames, Twist::Zero());
  for (int f = 0; f < frames; ++f) {
    const Twist tau_out = extract_tangent_grad(gout.data() + 12 * f, pout[f]);
    if (c->fixed[f]) continue;  // identity rows pass their raw gradient below
    const Twist step = c->dxi.segment<6>(6 * free_block[f]);
    gxi.segment<6>(6 * free_block[f]) =
        se3_left_jacobian(step).transpose() * tau_out;
    tau_pass[f] = SE3::exp(step).adjoint().transpose() * tau_out;
  }

  std::vector<Array> grads;
  grads.push_back(Array::Zero(frames * 12));
  for (int e = 0; e < edge_count; ++e) {
    grads.push_back(Array::Zero(c->points[e].rows() * 3));
    grads.push_back(Array::Zero(c->points[e].rows() * 3));
  }

  if (!c->skipped) {
    // Rebuild the forward linearization (bit-identical: same data, same
    // order) and run the adjoint of solve+assemble.
    std::vector<EdgeTerms> terms(edge_count);
    for (int e = 0; e < edge_count; ++e) {
      terms[e].a = c->edge_a[e];
      terms[e].b = c->edge_b[e];
      terms[e].points = c->points[e];
      const int n = static_cast<int>(c->points[e].rows());
      terms[e].target = as_points(c->target[e]->values, n);
      terms[e].weight = as_points(c->weight[e]->values, n);
      linearize_edge(pin[terms[e].a], pin[terms[e].b], terms[e]);
    }
    NormalEquations neq = assemble(terms, c->fixed, frames);
    Eigen::MatrixXd damped = neq.h;
    damped.diagonal() += c->lambda_used * neq.h.diagonal();
    const Eigen::VectorXd y = Eigen::LLT<Eigen::MatrixXd>(damped).solve(gxi);
    Eigen::MatrixXd dh = -y * c->dxi.transpose();
    dh.diagonal() *= 1.0 + c->lambda_used;  // chain through the damping

    for (int e = 0; e < edge_count; ++e) {
      const EdgeTerms& t = terms[e];
      const int ba = free_block[t.a];
      const int bb = free_block[t.b];
      Mat1212 dh12 = Mat1212::Zero();
      Vec12 db12 = Vec12::Zero();
      if (ba >= 0) {
        dh12.block<6, 6>(0, 0) = dh.block<6, 6>(6 * ba, 6 * ba);
        db12.head<6>() = y.segment<6>(6 * ba);
      }
      if (bb >= 0) {
        dh12.block<6, 6>(6, 6) = dh.block<6, 6>(6 * bb, 6 * bb);
        db12.tail<6>() = y.segment<6>(6 * bb);
      }
      if (ba >= 0 && bb >= 0) {
        dh12.block<6, 6>(0, 6) = dh.block<6, 6>(6 * ba, 6 * bb);
        dh12.block<6, 6>(6, 0) = dh.block<6, 6>(6 * bb, 6 * ba);
      }
      const Mat1212 dh12_sym = dh12 + dh12.transpose();
      const SE3 t12 = pin[t.b] * pin[t.a].inverse();
      const Mat6 adj = t12.adjoint();
      const Mat3& r12 = t12.rotation();
      const Vec3& t12t = t12.translation();

      Mat3 big_gr = Mat3::Zero();
      Vec3 big_gt = Vec3::Zero();
      Mat6 da = Mat6::Zero();
      Array& gtarget = grads[1 + 2 * e];
      Array& gweight = grads[2 + 2 * e];
      const int n = static_cast<int>(t.points.rows());
      for (int i = 0; i < n; ++i) {
        Mat312 a;
        a.leftCols<6>() = t.j1[i];
        a.rightCols<6>() = t.j2[i];
        const Vec3 w = t.weight.row(i);
        const Vec3 r = t.residual.row(i);
        Vec3 de;
        for (int ax = 0; ax < 3; ++ax) {
          const Vec12 row = a.row(ax);
          const double rdb = row.dot(db12);
          gweight[i * 3 + ax] = row.dot(dh12 * row) - r[ax] * rdb;
          de[ax] = -w[ax] * rdb;
          gtarget[i * 3 + ax] = de[ax];
        }
        const Mat312 dr = w.asDiagonal() * (a * dh12_sym) -
                          w.cwiseProduct(r) * db12.transpose();
        const Eigen::Matrix<double, 3, 6> dj1 = dr.leftCols<6>();
        const Eigen::Matrix<double, 3, 6> dj2 =
            dr.rightCols<6>() - dj1 * adj.transpose();
        da.noalias() -= t.j2[i].transpose() * dj1;
        // J2's right block is hat(g); E = target - g.
        Vec3 dg = axial(Mat3(dj2.rightCols<3>())) - de;
        big_gr.noalias() += dg * t.points.row(i);
        big_gt += dg;
      }
      // Adjoint blocks: Adj = [[R, hat(t) R], [0, R]].
      big_gr += da.block<3, 3>(0, 0) + hat(t12t).transpose() * da.block<3, 3>(0, 3) +
                da.block<3, 3>(3, 3);
      big_gt += axial(Mat3(da.block<3, 3>(0, 3) * r12.transpose()));
      // T12 = Tb Ta^-1: left-perturbing Tb moves T12 from the left,
      // perturbing Ta from the right with a flipped sign.
      tau_edge[t.b].head<3>() += big_gt;
      tau_edge[t.b].tail<3>() +=
          axial(Mat3(big_gr * r12.transpose())) + t12t.cross(big_gt);
      tau_edge[t.a].head<3>() -= r12.transpose() * big_gt;
      tau_edge[t.a].tail<3>() += axial(Mat3(big_gr.transpose() * r12));
    }
  }

  Array& gpose = grads[0];
  for (int f = 0; f < frames; ++f) {
    double row[12] = {0};
    if (c->fixed[f]) {
      for (int j = 0; j < 12; ++j) row[j] = gout[12 * f + j];
      double extra[12];
      pack_tangent_grad(tau_edge[f], pin[f], extra);
      for (int j = 0; j < 12; ++j) row[j] += extra[j];
    } else {
      pack_tangent_grad(Twist(tau_pass[f] + tau_edge[f]), pin[f], row);
    }
    for (int j = 0; j < 12; ++j) gpose[12 * f + j] = row[j];
  }
  return grads;
}

}  // namespace

Tensor amba_step(const FrameGraph& graph, const Tensor& pose_state,
                 const std::vector<Tensor>& targets,
                 const std::vector<Tensor>& confidences,
                 const OperatorConfig& cfg, StepDiagnostics* diag) {
  const int frames = graph.frame_count();
  const int edge_count = graph.edge_count();
  if (pose_state.ndim() != 2 || pose_state.dim(0) != frames ||
      pose_state.dim(1) != 12)
    throw ShapeMismatch("amba_step: pose state must be (frames, 12)");
  if (static_cast<int>(targets.size()) != edge_count ||
      static_cast<int>(confidences.size()) != edge_count)
    throw ArityMismatch("amba_step: one target/confidence per edge");

  auto cache = std::make_shared<AmbaCache>();
  cache->frames = frames;
  cache->fixed = graph.fixed;
  cache->pose_in = pose_state.values();

  std::vector<SE3> poses = poses_from_state(pose_state);
  std::vector<EdgeTerms> terms(edge_count);
  for (int e = 0; e < edge_count; ++e) {
    const EdgeState& es = graph.edges[e];
    const int n = static_cast<int>(graph.clouds[es.a].points.size());
    if (targets[e].rows() != n || confidences[e].rows() != n)
      throw ShapeMismatch("amba_step: edge tensors do not match the cloud");
    terms[e].a = es.a;
    terms[e].b = es.b;
    terms[e].points.resize(n, 3);
    for (int i = 0; i < n; ++i)
      terms[e].points.row(i) = graph.clouds[es.a].points[i];
    terms[e].target = as_points(targets[e].values(), n);
    terms[e].weight = as_points(confidences[e].values(), n);
    linearize_edge(poses[es.a], poses[es.b], terms[e]);
    cache->edge_a.push_back(es.a);
    cache->edge_b.push_back(es.b);
    cache->points.push_back(terms[e].points);
    cache->target.push_back(targets[e].handle());
    cache->weight.push_back(confidences[e].handle());
  }

  NormalEquations neq = assemble(terms, graph.fixed, frames);
  cache->skipped = neq.h.lpNorm<Eigen::Infinity>() == 0.0 &&
                   neq.b.lpNorm<Eigen::Infinity>() == 0.0;
  cache->dxi = solve_normal_equations(neq, cfg.damping, cfg.damping_max,
                                      &cache->lambda_used);

  Array out_values = pose_state.values();
  for (int f = 0; f < frames; ++f) {
    const int block = neq.free_block[f];
    if (block < 0) continue;
    const SE3 updated = retract(poses[f], cache->dxi.segment<6>(6 * block));
    write_pose_row(out_values.data() + 12 * f, updated);
  }
  cache->pose_out = out_values;

  if (diag) {
    double cost = 0.0;
    for (const EdgeTerms& t : terms)
      cost += (t.weight.array() * t.residual.array().square()).sum();
    diag->cost_before = cost;
    diag->step_norm =
        cache->dxi.size() ? cache->dxi.lpNorm<Eigen::Infinity>() : 0.0;
    diag->damping_used = cache->lambda_used;
  }

  std::vector<Tensor> inputs;
  inputs.push_back(pose_state);
  for (int e = 0; e < edge_count; ++e) {
    inputs.push_back(targets[e]);
    inputs.push_back(confidences[e]);
  }
  return custom_node(inputs, {frames, 12}, std::move(out_values),
                     [cache](const Array& gout) {
                       return amba_backward(cache, gout);
                     });
}

// --- full operator iteration ---

void init_edge_state(FrameGraph& graph, int edge_index,
                     const OperatorConfig& cfg) {
  EdgeState& es = graph.edges[edge_index];
  const PointCloud& cloud = graph.clouds[es.a];
  es.points = cloud_tensor(cloud);
  const PointCloud warped = warp(cloud, graph.poses[es.a], graph.poses[es.b]);
  es.flow = sub(cloud_tensor(warped), es.points);
  es.hidden = initial_hidden(graph.context[es.a], cfg.hidden);
  es.revision = Tensor({static_cast<int>(cloud.points.size()), 3}, 0.0);
  es.confidence = Tensor({static_cast<int>(cloud.points.size()), 3}, 0.5);
}

IterationState gather_state(const FrameGraph& graph,
                            const OperatorConfig& cfg) {
  (void)cfg;
  IterationState st;
  st.poses = pose_state_from(graph.poses);
  std::vector<Tensor> hidden;
  for (const EdgeState& es : graph.edges) {
    hidden.push_back(es.hidden);
    st.flows.push_back(es.flow);
  }
  st.hidden = concat(hidden, 0);
  return st;
}

void scatter_state(FrameGraph& graph, const IterationState& state,
                   const OperatorConfig& cfg) {
  (void)cfg;
  graph.poses = poses_from_state(state.poses);
  int row = 0;
  for (int e = 0; e < graph.edge_count(); ++e) {
    EdgeState& es = graph.edges[e];
    const int n = static_cast<int>(graph.clouds[es.a].points.size());
    es.hidden = slice(state.hidden, 0, row, row + n);
    es.flow = state.flows[e];
    if (!state.revisions.empty()) es.revision = state.revisions[e];
    if (!state.confidences.empty()) es.confidence = state.confidences[e];
    row += n;
  }
}

IterationState run_iteration(const FrameGraph& graph, const ParamStore& params,
                             const OperatorConfig& cfg,
                             const IterationState& state) {
  const int edge_count = graph.edge_count();
  const std::vector<SE3> poses = poses_from_state(state.poses);

  std::vector<Tensor> corr(edge_count), warp_const(edge_count);
  std::vector<Tensor> ctx_parts(edge_count);
  std::vector<int> sizes(edge_count);
  for (int e = 0; e < edge_count; ++e) {
    const EdgeState& es = graph.edges[e];
    const PointCloud warped =
        warp(graph.clouds[es.a], poses[es.a], poses[es.b]);
    warp_const[e] = cloud_tensor(warped);
    corr[e] = lookup(warped, graph.clouds[es.b], es.volume, params,
                     cfg.lookup_prefix, cfg.lookup)
                  .features;
    ctx_parts[e] = graph.context[es.a];
    sizes[e] = static_cast<int>(graph.clouds[es.a].points.size());
  }

  const Tensor motion =
      encode_motion(params, cfg.prefix, concat(corr, 0), concat(ctx_parts, 0),
                    concat(state.flows, 0));
  IterationState out;
  out.hidden = gru_update(params, cfg.prefix, state.hidden, motion);
  const HeadOutput heads = predict_heads(params, cfg.prefix, out.hidden);

  std::vector<Tensor> targets(edge_count);
  int row = 0;
  for (int e = 0; e < edge_count; ++e) {
    out.revisions.push_back(slice(heads.revision, 0, row, row + sizes[e]));
    out.confidences.push_back(
        slice(heads.confidence, 0, row, row + sizes[e]));
    targets[e] = add(warp_const[e], out.revisions[e]);
    row += sizes[e];
  }

  Tensor pose_state = state.poses;
  for (int s = 0; s < cfg.ba_per_iter; ++s) {
    StepDiagnostics d;
    pose_state = amba_step(graph, pose_state, targets, out.confidences, cfg,
                           &d);
    out.steps.push_back(d);
  }
  out.poses = pose_state;

  // Pose-consistent reset: the flow carried into the next iteration is the
  // full predicted correspondence field relative to the source points.
  for (int e = 0; e < edge_count; ++e)
    out.flows.push_back(sub(targets[e], graph.edges[e].points));
  return out;
}

Tensor iterate(FrameGraph& graph, const ParamStore& params,
               const OperatorConfig& cfg, int n_iters,
               std::vector<StepDiagnostics>* diagnostics) {
  IterationState st = gather_state(graph, cfg);
  for (int k = 0; k < n_iters; ++k) {
    st = run_iteration(graph, params, cfg, st);
    if (diagnostics)
      diagnostics->insert(diagnostics->end(), st.steps.begin(),
                          st.steps.end());
  }
  scatter_state(graph, st, cfg);
  return st.poses;
}

}  // namespace rodo
