#include "rodo/backbone.hpp"

#include <cmath>
#include <limits>

#include "rodo/errors.hpp"
#include "rodo/nn.hpp"

namespace rodo {
namespace {

constexpr int kAttrs = 5;  // x y z intensity radial_velocity
constexpr double kNormEps = 1e-12;

std::string key(const std::string& role, const std::string& name) {
  return role + "." + name;
}

double attr(const std::vector<double>& v, int i) {
  return v.empty() ? 0.0 : v[i];
}

// Constant N x 5 attribute matrix; the cloud itself is not differentiated.
Tensor attribute_matrix(const PointCloud& cloud) {
  const int n = static_cast<int>(cloud.size());
  Array vals(n * kAttrs);
  for (int i = 0; i < n; ++i) {
    vals[i * kAttrs + 0] = cloud.points[i].x();
    vals[i * kAttrs + 1] = cloud.points[i].y();
    vals[i * kAttrs + 2] = cloud.points[i].z();
    vals[i * kAttrs + 3] = attr(cloud.intensity, i);
    vals[i * kAttrs + 4] = attr(cloud.radial_velocity, i);
  }
  return Tensor({n, kAttrs}, std::move(vals));
}

// Rows of unit norm; eps keeps the gradient finite for zero rows.
Tensor normalize_rows(const Tensor& a) {
  Tensor sq = mul(a, a);
  Tensor ones({a.dim(1), 1}, 1.0);
  Tensor norm2 = matmul(sq, ones);
  Tensor eps({1}, kNormEps);
  Tensor inv = reciprocal(sqrt_op(add(norm2, eps)));
  return scale_rows(a, inv);
}

// sigmoid(alpha * s + beta) for the similarity of each point with its centre.
Tensor assigned_gate(const ClusterState& state, const Tensor& alpha,
                     const Tensor& beta) {
  const int c = state.similarity.dim(0);
  const int n = state.similarity.dim(1);
  std::vector<int> flat(n);
  for (int m = 0; m < n; ++m) flat[m] = state.assignment[m] * n + m;
  Tensor s_sel = gather(reshape(state.similarity, {c * n, 1}), flat);
  Tensor a1 = reshape(alpha, {1});
  Tensor b1 = reshape(beta, {1});
  return sigmoid(add(mul(s_sel, a1), b1));
}

}  // namespace

void init_backbone(ParamStore& params, const std::string& role,
                   const BackboneConfig& cfg, std::mt19937_64& rng) {
  if (cfg.joint_dim() != cfg.out_dim)
    throw Error("backbone: joint width must equal out_dim for the skip");
  for (int s = 0; s < static_cast<int>(cfg.radii.size()); ++s) {
    const std::string base = key(role, "sa" + std::to_string(s));
    init_linear(params, base + ".l0", kAttrs, cfg.scale_hidden, rng);
    init_linear(params, base + ".l1", cfg.scale_hidden, cfg.scale_dim, rng);
  }
  init_linear(params, key(role, "embed.l0"), kAttrs, cfg.embed_hidden, rng);
  init_linear(params, key(role, "embed.l1"), cfg.embed_hidden, cfg.embed_dim,
              rng);
  params.create(key(role, "alpha"), {1, 1}).mutable_values()[0] = 1.0;
  params.create(key(role, "beta"), {1, 1});
  const int d = cfg.out_dim;
  init_linear(params, key(role, "attn.query"), cfg.joint_dim(), d, rng);
  init_linear(params, key(role, "attn.key"), cfg.joint_dim(), d, rng);
  init_linear(params, key(role, "attn.value"), cfg.joint_dim(), d, rng);
  init_linear(params, key(role, "attn.out"), d, d, rng);
  Tensor& gain = params.create(key(role, "attn.norm.gain"), {d});
  gain.mutable_values() = Array::Ones(d);
  params.create(key(role, "attn.norm.bias"), {d});
}

Tensor multi_scale_geometric(const ParamStore& params, const std::string& role,
                             const BackboneConfig& cfg,
                             const PointCloud& cloud) {
  const int n = static_cast<int>(cloud.size());
  std::vector<Tensor> scales;
  scales.reserve(cfg.radii.size());
  for (int s = 0; s < static_cast<int>(cfg.radii.size()); ++s) {
    const NeighborIndex nb =
        ball_query(cloud, cloud, cfg.radii[s], cfg.ball_samples);
    const int k = nb.k;  // clamped to the cloud size on tiny inputs
    Array rel(static_cast<int64_t>(n) * k * kAttrs);
    for (int m = 0; m < n; ++m) {
      for (int c = 0; c < k; ++c) {
        const int j = nb.index(m, c);
        const Vec3 d = cloud.points[j] - cloud.points[m];
        double* row = rel.data() + (static_cast<int64_t>(m) * k + c) * kAttrs;
        row[0] = d.x();
        row[1] = d.y();
        row[2] = d.z();
        row[3] = attr(cloud.intensity, j);
        row[4] = attr(cloud.radial_velocity, j);
      }
    }
    Tensor enc({n * k, kAttrs}, std::move(rel));
    const std::string base = key(role, "sa" + std::to_string(s));
    Tensor h = relu(apply_linear(params, base + ".l0", enc));
    h = apply_linear(params, base + ".l1", h);
    scales.push_back(max_reduce(h, k));
  }
  return concat(scales, 1);
}

Tensor point_embedding(const ParamStore& params, const std::string& role,
                       const BackboneConfig&, const PointCloud& cloud) {
  Tensor h = relu(apply_linear(params, key(role, "embed.l0"),
                               attribute_matrix(cloud)));
  return apply_linear(params, key(role, "embed.l1"), h);
}

ClusterState cluster(const PointCloud& cloud, const Tensor& embed, int count,
                     int center_k) {
  const int n = static_cast<int>(cloud.size());
  if (count > n) throw CountTooLarge("cluster: more centres than points");
  if (center_k > n) throw KTooLarge("cluster: centre average exceeds cloud");
  // Canonical FPS seed: the point nearest the centroid (lowest index wins).
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : cloud.points) centroid += p;
  centroid /= static_cast<double>(n);
  int seed = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double d2 = (cloud.points[i] - centroid).squaredNorm();
    if (d2 < best) {
      best = d2;
      seed = i;
    }
  }
  ClusterState state;
  state.center_indices = farthest_point_sample(cloud, count, seed);

  std::vector<Vec3> centers(count);
  for (int j = 0; j < count; ++j)
    centers[j] = cloud.points[state.center_indices[j]];
  const NeighborIndex nb = knn(centers, cloud.points, center_k);
  // Mean of the K nearest embeddings as a constant averaging matrix, so the
  // centre features stay on the tape.
  Array avg = Array::Zero(static_cast<int64_t>(count) * n);
  for (int j = 0; j < count; ++j)
    for (int c = 0; c < center_k; ++c)
      avg[static_cast<int64_t>(j) * n + nb.index(j, c)] += 1.0 / center_k;
  state.center_features = matmul(Tensor({count, n}, std::move(avg)), embed);

  state.similarity = matmul(normalize_rows(state.center_features),
                            transpose(normalize_rows(embed)));
  state.assignment.resize(n);
  const Array& sim = state.similarity.values();
  for (int m = 0; m < n; ++m) {
    int arg = 0;
    double top = sim[m];
    for (int j = 1; j < count; ++j) {
      const double v = sim[static_cast<int64_t>(j) * n + m];
      if (v > top) {
        top = v;
        arg = j;
      }
    }
    state.assignment[m] = arg;
  }
  return state;
}

Tensor aggregate(const ClusterState& state, const Tensor& embed,
                 const Tensor& alpha, const Tensor& beta) {
  const int c = state.similarity.dim(0);
  Tensor sigma = assigned_gate(state, alpha, beta);
  Tensor sums = scatter_add(scale_rows(embed, sigma), state.assignment, c);
  Tensor denom = scatter_add(sigma, state.assignment, c);
  Tensor one({1}, 1.0);
  return scale_rows(add(state.center_features, sums),
                    reciprocal(add(denom, one)));
}

Tensor dispatch(const Tensor& embed, const Tensor& aggregated,
                const ClusterState& state, const Tensor& alpha,
                const Tensor& beta) {
  Tensor sigma = assigned_gate(state, alpha, beta);
  Tensor picked = gather(aggregated, state.assignment);
  return add(embed, scale_rows(picked, sigma));
}

Tensor global_transformer(const ParamStore& params, const std::string& role,
                          const Tensor& joint) {
  Tensor q = apply_linear(params, key(role, "attn.query"), joint);
  Tensor k = apply_linear(params, key(role, "attn.key"), joint);
  Tensor v = apply_linear(params, key(role, "attn.value"), joint);
  Tensor attn = softmax(matmul(q, transpose(k)));
  Tensor mixed = apply_linear(params, key(role, "attn.out"), matmul(attn, v));
  Tensor normed = layer_norm(mixed, params.at(key(role, "attn.norm.gain")),
                             params.at(key(role, "attn.norm.bias")));
  return add(normed, joint);
}

FeatureSet extract_features(const ParamStore& params, const std::string& role,
                            const BackboneConfig& cfg, const PointCloud& cloud) {
  if (cfg.joint_dim() != cfg.out_dim)
    throw Error("backbone: joint width must equal out_dim for the skip");
  FeatureSet f;
  f.geo = multi_scale_geometric(params, role, cfg, cloud);
  f.embed = point_embedding(params, role, cfg, cloud);
  f.cluster_state = cluster(cloud, f.embed, cfg.clusters, cfg.center_k);
  const Tensor& alpha = params.at(key(role, "alpha"));
  const Tensor& beta = params.at(key(role, "beta"));
  Tensor agg = aggregate(f.cluster_state, f.embed, alpha, beta);
  f.class_aware = dispatch(f.embed, agg, f.cluster_state, alpha, beta);
  f.joint = concat({f.geo, f.class_aware}, 1);
  f.out = global_transformer(params, role, f.joint);
  return f;
}

}  // namespace rodo
