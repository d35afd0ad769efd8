#pragma once

#include <vector>

#include "rodo/tensor.hpp"

namespace rodo {

// Elementwise ops accept equal shapes, or a rhs whose shape equals a trailing
// suffix of the lhs shape (leading-dimension expansion, e.g. bias rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor reciprocal(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)x(k,n)
Tensor transpose(const Tensor& a);                // 2-D

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int begin, int end);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
// Elementwise max over consecutive row groups: (R,C) -> (R/group, C).
Tensor max_reduce(const Tensor& a, int group);

Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a);  // per row

// Row indexing: out[i] = a[indices[i]]; scatter_add is its adjoint.
Tensor gather(const Tensor& a, const std::vector<int>& indices);
Tensor scatter_add(const Tensor& a, const std::vector<int>& indices,
                   int out_rows);
// out[i,:] = a[i,:] * s[i]; s has shape (R) or (R,1).
Tensor scale_rows(const Tensor& a, const Tensor& s);

// Per-row normalization with learned affine: gain/bias shaped (C).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Opaque node with analytically supplied backward; backward_fn must return
// one gradient per input, each matching that input's size.
Tensor custom_node(const std::vector<Tensor>& inputs, std::vector<int> shape,
                   Array values, CustomBackward backward_fn);

}  // namespace rodo
