#include "rodo/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace rodo {

double relative_error(const Array& analytic, const Array& numeric) {
  const double scale =
      std::max(analytic.abs().maxCoeff(), numeric.abs().maxCoeff());
  const double diff = (analytic - numeric).abs().maxCoeff();
  return diff / std::max(scale, 1e-6);
}

GradCheckReport gradcheck(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& inputs, double h) {
  std::vector<Tensor> tracked;
  for (const Tensor& t : inputs)
    tracked.push_back(Tensor(t.shape(), Array(t.values())).set_requires_grad(true));

  std::vector<Array> analytic;
  {
    Tape tape;
    const Tensor loss = fn(tracked);
    tape.backward(loss);
    for (const Tensor& t : tracked) analytic.push_back(tape.grad(t));
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Array numeric(inputs[i].size());
    for (int64_t k = 0; k < inputs[i].size(); ++k) {
      double plus = 0.0, minus = 0.0;
      for (int sign : {+1, -1}) {
        std::vector<Tensor> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Array v = inputs[j].values();
          if (j == i) v[k] += sign * h;
          probe.push_back(Tensor(inputs[j].shape(), std::move(v)));
        }
        (sign > 0 ? plus : minus) = fn(probe).item();
      }
      numeric[k] = (plus - minus) / (2.0 * h);
    }
    report.max_rel_error.push_back(relative_error(analytic[i], numeric));
    report.worst = std::max(report.worst, report.max_rel_error.back());
  }
  return report;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream out;
  out << "gradcheck worst=" << worst << " per-input=[";
  for (std::size_t i = 0; i < max_rel_error.size(); ++i)
    out << (i ? ", " : "") << max_rel_error[i];
  out << "]";
  return out.str();
}

}  // namespace rodo
