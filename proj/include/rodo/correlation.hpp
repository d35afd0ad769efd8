#pragma once

#include <random>
#include <string>

#include "rodo/checkpoint.hpp"
#include "rodo/ops.hpp"
#include "rodo/point_cloud.hpp"

namespace rodo {

// Two-stage adaptive correlation lookup. Stage 1 weights the correlation
// entries of the k1 nearest cross-frame neighbours; stage 2 smooths the
// result over the k2 nearest warped-frame neighbours. Neighbour weights come
// from small MLPs over raw 3D displacements, so the lookup is exactly
// invariant to a common translation of both clouds but not to rotations.
struct LookupConfig {
  int k1 = 8;
  int k2 = 4;
  int hidden = 32;      // displacement MLP hidden width (two layers)
  int encode_dim = 8;   // per-neighbour displacement encoding width

  int feature_dim() const { return k1 + encode_dim; }
};

struct LookupResult {
  Tensor features;        // N x feature_dim after both stages
  Tensor stage1;          // N x feature_dim before stage 2
  Tensor stage1_weights;  // N x k1, rows sum to 1
  Tensor stage2_weights;  // N x k2, rows sum to 1
};

// All-pair correlation volume V = F1 * F2^T / sqrt(D).
Tensor build_volume(const Tensor& f1, const Tensor& f2);

// P12 = (T2 o T1^-1) applied to P1.
PointCloud warp(const PointCloud& p1, const SE3& t1, const SE3& t2);

void init_lookup(ParamStore& params, const std::string& prefix,
                 const LookupConfig& cfg, std::mt19937_64& rng);

LookupResult lookup(const PointCloud& warped, const PointCloud& p2,
                    const Tensor& volume, const ParamStore& params,
                    const std::string& prefix, const LookupConfig& cfg);

}  // namespace rodo
