#include "rodo/correlation.hpp"

#include <cmath>

#include "rodo/errors.hpp"
#include "rodo/nn.hpp"

namespace rodo {
namespace {

// Displacement rows for each (query point, neighbour) pair. The geometry is
// held fixed during an operator iteration, so these are plain constants.
Tensor displacement_rows(const std::vector<Vec3>& query,
                         const std::vector<Vec3>& target,
                         const NeighborIndex& nb) {
  Array vals(static_cast<int64_t>(nb.rows) * nb.k * 3);
  for (int i = 0; i < nb.rows; ++i)
    for (int c = 0; c < nb.k; ++c) {
      const Vec3 d = target[nb.index(i, c)] - query[i];
      double* row = vals.data() + (static_cast<int64_t>(i) * nb.k + c) * 3;
      row[0] = d.x();
      row[1] = d.y();
      row[2] = d.z();
    }
  return Tensor({nb.rows * nb.k, 3}, std::move(vals));
}

Tensor trunk(const ParamStore& params, const std::string& base,
             const Tensor& disp) {
  Tensor h = relu(apply_linear(params, base + ".l0", disp));
  return relu(apply_linear(params, base + ".l1", h));
}

// Softmax per query over its neighbour group.
Tensor group_softmax(const Tensor& logits, int rows, int k) {
  return softmax(reshape(logits, {rows, k}));
}

// Sum of per-neighbour rows weighted by flattened group weights.
Tensor weighted_group_sum(const Tensor& rows_tensor, const Tensor& weights,
                          int rows, int k) {
  std::vector<int> group(static_cast<std::size_t>(rows) * k);
  for (int i = 0; i < rows * k; ++i) group[i] = i / k;
  Tensor scaled = scale_rows(rows_tensor, reshape(weights, {rows * k}));
  return scatter_add(scaled, group, rows);
}

}  // namespace

Tensor build_volume(const Tensor& f1, const Tensor& f2) {
  if (f1.ndim() != 2 || f2.ndim() != 2 || f1.dim(1) != f2.dim(1))
    throw ShapeMismatch("build_volume: feature widths differ");
  const double scale = 1.0 / std::sqrt(static_cast<double>(f1.dim(1)));
  return scalar_mul(matmul(f1, transpose(f2)), scale);
}

PointCloud warp(const PointCloud& p1, const SE3& t1, const SE3& t2) {
  return act(t2 * t1.inverse(), p1);
}

void init_lookup(ParamStore& params, const std::string& prefix,
                 const LookupConfig& cfg, std::mt19937_64& rng) {
  for (const char* stage : {"stage1", "stage2"}) {
    const std::string base = prefix + "." + stage;
    init_linear(params, base + ".l0", 3, cfg.hidden, rng);
    init_linear(params, base + ".l1", cfg.hidden, cfg.hidden, rng);
    init_linear(params, base + ".logit", cfg.hidden, 1, rng);
  }
  init_linear(params, prefix + ".stage1.enc", cfg.hidden, cfg.encode_dim, rng);
}

LookupResult lookup(const PointCloud& warped, const PointCloud& p2,
                    const Tensor& volume, const ParamStore& params,
                    const std::string& prefix, const LookupConfig& cfg) {
  const int n = static_cast<int>(warped.size());
  if (cfg.k1 > static_cast<int>(p2.size()) || cfg.k2 > n)
    throw KTooLarge("lookup: more neighbours than points");
  if (volume.dim(0) != n || volume.dim(1) != static_cast<int>(p2.size()))
    throw ShapeMismatch("lookup: volume does not match the clouds");

  LookupResult res;

  // Stage 1: weight correlation entries over cross-frame neighbours.
  const NeighborIndex nb1 = knn(warped, p2, cfg.k1);
  Tensor disp1 = displacement_rows(warped.points, p2.points, nb1);
  Tensor h1 = trunk(params, prefix + ".stage1", disp1);
  res.stage1_weights =
      group_softmax(apply_linear(params, prefix + ".stage1.logit", h1), n,
                    cfg.k1);
  std::vector<int> flat(static_cast<std::size_t>(n) * cfg.k1);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < cfg.k1; ++c)
      flat[static_cast<std::size_t>(i) * cfg.k1 + c] =
          i * static_cast<int>(p2.size()) + nb1.index(i, c);
  Tensor corr = reshape(
      gather(reshape(volume, {n * static_cast<int>(p2.size()), 1}), flat),
      {n, cfg.k1});
  Tensor corr_part = mul(res.stage1_weights, corr);
  Tensor enc = apply_linear(params, prefix + ".stage1.enc", h1);
  Tensor enc_part = weighted_group_sum(enc, res.stage1_weights, n, cfg.k1);
  res.stage1 = concat({corr_part, enc_part}, 1);

  // Stage 2: smooth stage-1 features over neighbours of the warped cloud.
  const NeighborIndex nb2 = knn(warped, warped, cfg.k2);
  Tensor disp2 = displacement_rows(warped.points, warped.points, nb2);
  Tensor h2 = trunk(params, prefix + ".stage2", disp2);
  res.stage2_weights =
      group_softmax(apply_linear(params, prefix + ".stage2.logit", h2), n,
                    cfg.k2);
  std::vector<int> rows(static_cast<std::size_t>(n) * cfg.k2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < cfg.k2; ++c)
      rows[static_cast<std::size_t>(i) * cfg.k2 + c] = nb2.index(i, c);
  Tensor gathered = gather(res.stage1, rows);
  res.features = weighted_group_sum(gathered, res.stage2_weights, n, cfg.k2);
  return res;
}

}  // namespace rodo
