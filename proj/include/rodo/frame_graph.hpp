#pragma once

#include <cstdint>
#include <vector>

#include "rodo/lie.hpp"
#include "rodo/point_cloud.hpp"
#include "rodo/tensor.hpp"

namespace rodo {

// Directed correspondence edge a -> b: points of frame a are matched into
// frame b. Every undirected neighbour pair appears twice, once per direction,
// each with its own recurrent state.
struct EdgeState {
  int a = 0;
  int b = 0;
  Tensor volume;      // (Na, Nb) correlation cache between frame features
  Tensor points;      // (Na, 3) source points as a constant tensor
  Tensor flow;        // (Na, 3) current motion field estimate
  Tensor hidden;      // (Na, H) recurrent state
  Tensor revision;    // (Na, 3) last predicted flow correction
  Tensor confidence;  // (Na, 3) last per-axis weights, in (0, 1)
};

// Sliding-window optimization graph. Frames are stored in window order;
// edges index into that order and are rebuilt when frames are dropped.
struct FrameGraph {
  std::vector<int> ids;             // external frame ids, window order
  std::vector<PointCloud> clouds;   // preprocessed clouds
  std::vector<SE3> poses;           // world -> sensor estimates
  std::vector<uint8_t> fixed;       // gauge anchors (at least one)
  std::vector<Tensor> features;     // (N, D) matching features per frame
  std::vector<Tensor> context;      // (N, D) context features per frame
  std::vector<EdgeState> edges;

  int frame_count() const { return static_cast<int>(ids.size()); }
  int edge_count() const { return static_cast<int>(edges.size()); }
  int free_count() const {
    int n = 0;
    for (uint8_t f : fixed) n += f ? 0 : 1;
    return n;
  }
};

}  // namespace rodo
