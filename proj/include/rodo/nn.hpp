#pragma once

#include <cmath>
#include <random>
#include <string>

#include "rodo/checkpoint.hpp"
#include "rodo/ops.hpp"

namespace rodo {

// Linear layer with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights and zero
// bias, stored as <name>.weight / <name>.bias.
inline void init_linear(ParamStore& params, const std::string& name, int fan_in,
                        int fan_out, std::mt19937_64& rng) {
  Tensor& w = params.create(name + ".weight", {fan_in, fan_out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < w.mutable_values().size(); ++i)
    w.mutable_values()[i] = dist(rng);
  params.create(name + ".bias", {fan_out});
}

inline Tensor apply_linear(const ParamStore& params, const std::string& name,
                           const Tensor& x) {
  return linear(x, params.at(name + ".weight"), params.at(name + ".bias"));
}

}  // namespace rodo
