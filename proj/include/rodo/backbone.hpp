#pragma once

#include <random>
#include <string>
#include <vector>

#include "rodo/checkpoint.hpp"
#include "rodo/ops.hpp"
#include "rodo/point_cloud.hpp"

namespace rodo {

// Widths of the dual-stream point feature extractor. The defaults are the
// desk-scale configuration used everywhere in the pipeline. joint width
// (4*scale_dim + embed_dim) must equal out_dim so the final skip connection
// type-checks.
struct BackboneConfig {
  std::vector<double> radii{0.5, 1.0, 2.0, 4.0};  // SA ball radii [m]
  int ball_samples = 16;  // neighbours pooled per scale
  int scale_dim = 16;     // per-scale geometric feature width
  int scale_hidden = 16;
  int embed_hidden = 32;
  int embed_dim = 64;  // point embedding width
  int clusters = 8;
  int center_k = 8;  // points averaged into a centre feature
  int out_dim = 128;

  int geo_dim() const { return static_cast<int>(radii.size()) * scale_dim; }
  int joint_dim() const { return geo_dim() + embed_dim; }
};

// Result of the clustering stream. The similarity matrix holds cosine values
// in [-1, 1]; assignment[m] is the argmax of column m (ties -> lowest centre).
struct ClusterState {
  std::vector<int> center_indices;  // C spatial centres picked by FPS
  Tensor center_features;           // C x d
  Tensor similarity;                // C x N
  std::vector<int> assignment;      // N
};

struct FeatureSet {
  Tensor geo;    // N x 4*scale_dim
  Tensor embed;  // N x embed_dim
  ClusterState cluster_state;
  Tensor class_aware;  // N x embed_dim
  Tensor joint;        // N x joint_dim
  Tensor out;          // N x out_dim
};

// Creates one weight set under the given role prefix ("feature", "context").
// Linear layers use uniform +-1/sqrt(fan_in); alpha/beta start at 1/0.
void init_backbone(ParamStore& params, const std::string& role,
                   const BackboneConfig& cfg, std::mt19937_64& rng);

// Four parallel set-abstraction scales: ball neighbourhood, relative
// coordinate + neighbour attribute MLP, max pool; concatenated over scales.
Tensor multi_scale_geometric(const ParamStore& params, const std::string& role,
                             const BackboneConfig& cfg, const PointCloud& cloud);

Tensor point_embedding(const ParamStore& params, const std::string& role,
                       const BackboneConfig& cfg, const PointCloud& cloud);

// FPS centres seeded at the point nearest the centroid, centre features as
// the mean embedding of the center_k spatially nearest points, cosine
// similarity against every point, column argmax assignment.
ClusterState cluster(const PointCloud& cloud, const Tensor& embed, int count,
                     int center_k);

// Per-cluster update: (f_ct + sum sigma * f_p) / (1 + sum sigma) over the
// points assigned to the cluster, sigma = sigmoid(alpha * s + beta).
Tensor aggregate(const ClusterState& state, const Tensor& embed,
                 const Tensor& alpha, const Tensor& beta);

// Per-point update: f_p + sigma * f_a[assignment].
Tensor dispatch(const Tensor& embed, const Tensor& aggregated,
                const ClusterState& state, const Tensor& alpha,
                const Tensor& beta);

// Full self-attention with dot-product scores and row softmax, then linear +
// layer norm + skip.
Tensor global_transformer(const ParamStore& params, const std::string& role,
                          const Tensor& joint);

FeatureSet extract_features(const ParamStore& params, const std::string& role,
                            const BackboneConfig& cfg, const PointCloud& cloud);

}  // namespace rodo
