#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rodo/ops.hpp"

namespace rodo {

struct GradCheckReport {
  // Max relative error per input tensor (object-scale normalization).
  std::vector<double> max_rel_error;
  double worst = 0.0;
  bool passed(double tol) const { return worst < tol; }
  std::string to_string() const;
};

// Central-difference check of reverse-mode gradients for a scalar-valued
// function of the given inputs. All inputs are treated as differentiable.
GradCheckReport gradcheck(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& inputs, double h = 1e-5);

// Object-scale relative error between analytic and numeric gradients.
double relative_error(const Array& analytic, const Array& numeric);

}  // namespace rodo
