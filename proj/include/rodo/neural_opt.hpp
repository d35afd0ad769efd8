#pragma once

#include <random>
#include <string>
#include <vector>

#include "rodo/checkpoint.hpp"
#include "rodo/correlation.hpp"
#include "rodo/frame_graph.hpp"
#include "rodo/pose_tensor.hpp"

namespace rodo {

// Recurrent optimization operator: each iteration looks up correlation
// features at the warped points, updates a GRU state, predicts a flow
// revision and per-axis confidences, and runs damped Gauss-Newton steps on
// the window poses against the revised targets.
struct OperatorConfig {
  int hidden = 64;       // GRU state width
  int flow_dim = 32;     // encoded-flow width
  int head_hidden = 64;  // hidden width of the two prediction heads
  int context_dim = 128;
  LookupConfig lookup;
  double damping = 1e-6;      // initial Levenberg multiplier on diag(H)
  double damping_max = 1e-2;  // escalation cap (x10 per retry)
  int ba_per_iter = 2;        // Gauss-Newton steps per operator iteration
  std::string prefix = "op";
  std::string lookup_prefix = "lookup";

  int motion_width() const {
    return lookup.feature_dim() + context_dim + flow_dim;
  }
};

// Per-step report, one entry per Gauss-Newton step.
struct StepDiagnostics {
  double cost_before = 0.0;   // sum w * E^2 at the step's input poses
  double step_norm = 0.0;     // ||dxi||_inf over free frames
  double damping_used = 0.0;  // final Levenberg multiplier
};

void init_operator(ParamStore& params, const std::string& prefix,
                   const OperatorConfig& cfg, std::mt19937_64& rng);

// Motion features: concat(correlation features, context, MLP(flow)).
Tensor encode_motion(const ParamStore& params, const std::string& prefix,
                     const Tensor& corr, const Tensor& context,
                     const Tensor& flow);

// Gated recurrent update of h from motion features.
Tensor gru_update(const ParamStore& params, const std::string& prefix,
                  const Tensor& h, const Tensor& motion);

struct HeadOutput {
  Tensor revision;    // (N, 3) flow correction, linear output
  Tensor confidence;  // (N, 3) in (0, 1), sigmoid output
};
HeadOutput predict_heads(const ParamStore& params, const std::string& prefix,
                         const Tensor& h);

// Initial recurrent state: tanh of the first `hidden` context channels.
Tensor initial_hidden(const Tensor& context, int hidden);

// --- Gauss-Newton core (plain Eigen, wrapped on the tape by amba_step) ---

// Per-point jacobians of the residual E_i = target_i - (R12 p_i + t12) wrt
// left perturbations of the two poses, sign convention
// E(retract(dxi)) ~= E + J * dxi. With g = R12 p + t12:
//   J2 = -[I | -hat(g)],  J1 = -J2 * Adj(T12),  T12 = Tb * Ta^-1.
struct EdgeTerms {
  int a = 0;
  int b = 0;
  Eigen::MatrixX3d points;    // source points (frame a)
  Eigen::MatrixX3d target;    // predicted positions in frame b
  Eigen::MatrixX3d weight;    // per-axis confidences
  Eigen::MatrixX3d residual;  // filled by linearize_edge
  std::vector<Eigen::Matrix<double, 3, 6>> j1, j2;
};

void linearize_edge(const SE3& ta, const SE3& tb, EdgeTerms& terms);

struct NormalEquations {
  Eigen::MatrixXd h;            // (6F_free)^2, undamped
  Eigen::VectorXd b;            // -J^T W E stacked over free frames
  std::vector<int> free_block;  // frame -> block index, -1 when fixed
  int free_frames = 0;
};

// Throws AllFramesFixed when no frame is free.
NormalEquations assemble(const std::vector<EdgeTerms>& terms,
                         const std::vector<uint8_t>& fixed, int frame_count);

// Damped Cholesky solve of (H + lambda diag(H)) dxi = b with x10 escalation
// of lambda up to lambda_max; throws NotPositiveDefinite when every level
// fails factorization or the residual acceptance test.
Eigen::VectorXd solve_normal_equations(const NormalEquations& neq,
                                       double lambda, double lambda_max,
                                       double* lambda_used = nullptr);

// One Gauss-Newton step over the graph as a differentiable tape node.
// pose_state is (F, 12); targets/confidences hold one (N, 3) tensor per
// graph edge. Fixed frames keep their rows bit-identical. The backward pass
// is the analytic adjoint of assemble+solve+retract.
Tensor amba_step(const FrameGraph& graph, const Tensor& pose_state,
                 const std::vector<Tensor>& targets,
                 const std::vector<Tensor>& confidences,
                 const OperatorConfig& cfg,
                 StepDiagnostics* diag = nullptr);

// --- full operator iteration ---

struct IterationState {
  Tensor poses;               // (F, 12)
  Tensor hidden;              // (sum_e Na, H), edges batched in graph order
  std::vector<Tensor> flows;  // per edge (Na, 3)
  std::vector<Tensor> revisions;
  std::vector<Tensor> confidences;
  std::vector<StepDiagnostics> steps;
};

// Fills volume-independent state for a newly created edge: constant source
// points, pose-consistent initial flow, h0 from the source frame context.
void init_edge_state(FrameGraph& graph, int edge_index,
                     const OperatorConfig& cfg);

// Gathers the batched state from the graph's edge states and poses.
IterationState gather_state(const FrameGraph& graph,
                            const OperatorConfig& cfg);

// Writes batched state back into the graph (edge tensors + pose values).
void scatter_state(FrameGraph& graph, const IterationState& state,
                   const OperatorConfig& cfg);

// One operator iteration: warp -> correlation lookup -> motion encoding ->
// GRU -> heads -> ba_per_iter damped Gauss-Newton steps, then the flows are
// reset pose-consistently (target - source). Pure function of (graph caches,
// params, state).
IterationState run_iteration(const FrameGraph& graph, const ParamStore& params,
                             const OperatorConfig& cfg,
                             const IterationState& state);

// Runs n_iters iterations starting from the graph's stored state and writes
// the result back. Returns the final pose tensor.
Tensor iterate(FrameGraph& graph, const ParamStore& params,
               const OperatorConfig& cfg, int n_iters,
               std::vector<StepDiagnostics>* diagnostics = nullptr);

}  // namespace rodo
