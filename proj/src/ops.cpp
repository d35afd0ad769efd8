#include "rodo/ops.hpp"

#include <algorithm>
#include <cmath>

namespace rodo {

namespace {

using Data = std::shared_ptr<detail::TensorData>;

// rhs broadcasts when its shape is a trailing suffix of the lhs shape.
bool suffix_shape(const std::vector<int>& a, const std::vector<int>& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!suffix_shape(a.shape(), b.shape()))
    throw ShapeMismatch(std::string(op) + ": incompatible shapes");
}

// Sums g over the leading expansion back to the rhs size.
Array reduce_leading(const Array& g, int64_t rhs_size) {
  if (g.size() == rhs_size) return g;
  const int64_t reps = g.size() / rhs_size;
  Array out = Array::Zero(rhs_size);
  for (int64_t r = 0; r < reps; ++r)
    out += g.segment(r * rhs_size, rhs_size);
  return out;
}

Array tile_to(const Array& b, int64_t size) {
  if (b.size() == size) return b;
  Array out(size);
  const int64_t reps = size / b.size();
  for (int64_t r = 0; r < reps; ++r) out.segment(r * b.size(), b.size()) = b;
  return out;
}

template <class Backward>
Tensor record(std::initializer_list<const Tensor*> inputs, Tensor result,
              Backward&& make_backward) {
  if (should_record(inputs)) {
    Tape& tape = *Tape::active();
    std::vector<int> parents;
    parents.reserve(inputs.size());
    for (const Tensor* t : inputs) parents.push_back(tape.node_of(*t));
    auto backward = make_backward(parents);
    const int id = tape.add_node(parents, result.shape(), result.size(),
                                 std::move(backward));
    tape.tag_output(result, id);
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  Tensor out(a.shape(), Array(a.values() + tile_to(b.values(), a.size())));
  const int64_t bs = b.size();
  return record({&a, &b}, std::move(out), [bs](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      const Array& g = tp.node(self).grad;
      if (p[0] >= 0) tp.grad_ref(p[0]) += g;
      if (p[1] >= 0) tp.grad_ref(p[1]) += reduce_leading(g, bs);
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  Tensor out(a.shape(), Array(a.values() - tile_to(b.values(), a.size())));
  const int64_t bs = b.size();
  return record({&a, &b}, std::move(out), [bs](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      const Array& g = tp.node(self).grad;
      if (p[0] >= 0) tp.grad_ref(p[0]) += g;
      if (p[1] >= 0) tp.grad_ref(p[1]) -= reduce_leading(g, bs);
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  const Array bb = tile_to(b.values(), a.size());
  Tensor out(a.shape(), Array(a.values() * bb));
  const Data da = a.handle(), db = b.handle();
  return record({&a, &b}, std::move(out), [da, db](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      const Array& g = tp.node(self).grad;
      if (p[0] >= 0)
        tp.grad_ref(p[0]) += g * tile_to(db->values, da->values.size());
      if (p[1] >= 0)
        tp.grad_ref(p[1]) +=
            reduce_leading(Array(g * da->values), db->values.size());
    };
  });
}

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out(a.shape(), Array(a.values() * c));
  return record({&a}, std::move(out), [c](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0) tp.grad_ref(p[0]) += tp.node(self).grad * c;
    };
  });
}

Tensor reciprocal(const Tensor& a) {
  Tensor out(a.shape(), Array(1.0 / a.values()));
  const Data da = a.handle();
  return record({&a}, std::move(out), [da](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0)
        tp.grad_ref(p[0]) -=
            tp.node(self).grad / (da->values * da->values);
    };
  });
}

Tensor sqrt_op(const Tensor& a) {
  Tensor out(a.shape(), Array(a.values().sqrt()));
  const Data dout = out.handle();
  return record({&a}, std::move(out), [dout](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0)
        tp.grad_ref(p[0]) += tp.node(self).grad * 0.5 / dout->values;
    };
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size())
    throw ShapeMismatch("reshape: element count changed");
  Tensor out(std::move(shape), Array(a.values()));
  return record({&a}, std::move(out), [](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0) tp.grad_ref(p[0]) += tp.node(self).grad;
    };
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: need (m,k)x(k,n)");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  ConstMapRM ma(a.values().data(), m, k), mb(b.values().data(), k, n);
  MatrixRM prod = ma * mb;
  Tensor out({m, n}, Array(Eigen::Map<const Array>(prod.data(), prod.size())));
  const Data da = a.handle(), db = b.handle();
  return record({&a, &b}, std::move(out), [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      ConstMapRM g(tp.node(self).grad.data(), m, n);
      ConstMapRM va(da->values.data(), m, k), vb(db->values.data(), k, n);
      if (p[0] >= 0) {
        MatrixRM ga = g * vb.transpose();
        tp.grad_ref(p[0]) += Eigen::Map<const Array>(ga.data(), ga.size());
      }
      if (p[1] >= 0) {
        MatrixRM gb = va.transpose() * g;
        tp.grad_ref(p[1]) += Eigen::Map<const Array>(gb.data(), gb.size());
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeMismatch("transpose: need 2-D");
  const int r = a.dim(0), c = a.dim(1);
  ConstMapRM ma(a.values().data(), r, c);
  MatrixRM t = ma.transpose();
  Tensor out({c, r}, Array(Eigen::Map<const Array>(t.data(), t.size())));
  return record({&a}, std::move(out), [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] < 0) return;
      ConstMapRM g(tp.node(self).grad.data(), c, r);
      MatrixRM gt = g.transpose();
      tp.grad_ref(p[0]) += Eigen::Map<const Array>(gt.data(), gt.size());
    };
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat: empty input list");
  if (axis != 0 && axis != 1) throw ShapeMismatch("concat: axis must be 0/1");
  std::vector<int64_t> offsets;  // flat offsets for backward
  Tensor out;
  if (axis == 0) {
    int rows = 0;
    const int c = parts[0].cols();
    for (const Tensor& t : parts) {
      if (t.cols() != c) throw ShapeMismatch("concat: column mismatch");
      rows += t.rows();
    }
    std::vector<int> shape = parts[0].shape();
    shape[0] = rows;
    Array v(shape_size(shape));
    int64_t pos = 0;
    for (const Tensor& t : parts) {
      offsets.push_back(pos);
      v.segment(pos, t.size()) = t.values();
      pos += t.size();
    }
    out = Tensor(shape, std::move(v));
  } else {
    const int r = parts[0].rows();
    int c = 0;
    for (const Tensor& t : parts) {
      if (t.ndim() != 2 || t.rows() != r)
        throw ShapeMismatch("concat: row mismatch");
      c += t.dim(1);
    }
    Array v(static_cast<int64_t>(r) * c);
    int col = 0;
    for (const Tensor& t : parts) {
      const int tc = t.dim(1);
      offsets.push_back(col);
      for (int i = 0; i < r; ++i)
        v.segment(static_cast<int64_t>(i) * c + col, tc) =
            t.values().segment(static_cast<int64_t>(i) * tc, tc);
      col += tc;
    }
    out = Tensor({r, c}, std::move(v));
  }

  std::vector<const Tensor*> ptr;
  for (const Tensor& t : parts) ptr.push_back(&t);
  bool rec = false;
  for (const Tensor* t : ptr)
    if (should_record({t})) rec = true;
  if (!rec) return out;

  Tape& tape = *Tape::active();
  std::vector<int> parents;
  std::vector<std::vector<int>> shapes;
  for (const Tensor& t : parts) {
    parents.push_back(tape.node_of(t));
    shapes.push_back(t.shape());
  }
  const int rows_out = out.rows(), cols_out = out.cols();
  auto backward = [parents, shapes, offsets, axis, rows_out,
                   cols_out](Tape& tp, int self) {
    const Array& g = tp.node(self).grad;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i] < 0) continue;
      const int64_t sz = shape_size(shapes[i]);
      if (axis == 0) {
        tp.grad_ref(parents[i]) += g.segment(offsets[i], sz);
      } else {
        Array& dst = tp.grad_ref(parents[i]);
        const int tc = shapes[i][1];
        for (int r = 0; r < rows_out; ++r)
          dst.segment(static_cast<int64_t>(r) * tc, tc) +=
              g.segment(static_cast<int64_t>(r) * cols_out + offsets[i], tc);
      }
    }
  };
  const int id = tape.add_node(parents, out.shape(), out.size(), backward);
  tape.tag_output(out, id);
  return out;
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  if (axis != 0 && axis != 1) throw ShapeMismatch("slice: axis must be 0/1");
  if (axis == 1 && a.ndim() != 2) throw ShapeMismatch("slice: need 2-D");
  const int limit = axis == 0 ? a.rows() : a.dim(1);
  if (begin < 0 || end > limit || begin >= end)
    throw ShapeMismatch("slice: bad range");
  const int r = a.rows(), c = a.cols();
  Tensor out;
  if (axis == 0) {
    std::vector<int> shape = a.shape();
    shape[0] = end - begin;
    out = Tensor(shape,
                 Array(a.values().segment(static_cast<int64_t>(begin) * c,
                                          static_cast<int64_t>(end - begin) * c)));
  } else {
    Array v(static_cast<int64_t>(r) * (end - begin));
    for (int i = 0; i < r; ++i)
      v.segment(static_cast<int64_t>(i) * (end - begin), end - begin) =
          a.values().segment(static_cast<int64_t>(i) * c + begin, end - begin);
    out = Tensor({r, end - begin}, std::move(v));
  }
  return record({&a}, std::move(out), [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] < 0) return;
      const Array& g = tp.node(self).grad;
      Array& dst = tp.grad_ref(p[0]);
      if (axis == 0) {
        dst.segment(static_cast<int64_t>(begin) * c,
                    static_cast<int64_t>(end - begin) * c) += g;
      } else {
        for (int i = 0; i < r; ++i)
          dst.segment(static_cast<int64_t>(i) * c + begin, end - begin) +=
              g.segment(static_cast<int64_t>(i) * (end - begin), end - begin);
      }
    };
  });
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().sum());
  const int64_t n = a.size();
  return record({&a}, std::move(out), [n](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0)
        tp.grad_ref(p[0]) += Array::Constant(n, tp.node(self).grad[0]);
    };
  });
}

Tensor mean(const Tensor& a) {
  const int64_t n = a.size();
  Tensor out = Tensor::scalar(a.values().sum() / static_cast<double>(n));
  return record({&a}, std::move(out), [n](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0)
        tp.grad_ref(p[0]) += Array::Constant(
            n, tp.node(self).grad[0] / static_cast<double>(n));
    };
  });
}

Tensor max_reduce(const Tensor& a, int group) {
  if (a.ndim() != 2 || group <= 0 || a.dim(0) % group != 0)
    throw ShapeMismatch("max_reduce: rows must divide into groups");
  const int r = a.dim(0), c = a.dim(1), out_r = r / group;
  Array v(static_cast<int64_t>(out_r) * c);
  std::vector<int> arg(static_cast<std::size_t>(out_r) * c);
  for (int i = 0; i < out_r; ++i)
    for (int j = 0; j < c; ++j) {
      double best = a.at(i * group, j);
      int bestrow = i * group;
      for (int k = 1; k < group; ++k) {
        const double x = a.at(i * group + k, j);
        if (x > best) {
          best = x;
          bestrow = i * group + k;
        }
      }
      v[static_cast<int64_t>(i) * c + j] = best;
      arg[static_cast<std::size_t>(i) * c + j] = bestrow;
    }
  Tensor out({out_r, c}, std::move(v));
  return record({&a}, std::move(out), [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] < 0) return;
      const Array& g = tp.node(self).grad;
      Array& dst = tp.grad_ref(p[0]);
      for (int i = 0; i < out_r; ++i)
        for (int j = 0; j < c; ++j)
          dst[static_cast<int64_t>(arg[static_cast<std::size_t>(i) * c + j]) *
                  c +
              j] += g[static_cast<int64_t>(i) * c + j];
    };
  });
}

Tensor sigmoid(const Tensor& a) {
  Array y = 1.0 / (1.0 + (-a.values()).exp());
  Tensor out(a.shape(), y);
  const Data dout = out.handle();
  return record({&a}, std::move(out), [dout](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0) {
        const Array& y = dout->values;
        tp.grad_ref(p[0]) += tp.node(self).grad * y * (1.0 - y);
      }
    };
  });
}

Tensor tanh_op(const Tensor& a) {
  Tensor out(a.shape(), Array(a.values().tanh()));
  const Data dout = out.handle();
  return record({&a}, std::move(out), [dout](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0)
        tp.grad_ref(p[0]) +=
            tp.node(self).grad * (1.0 - dout->values * dout->values);
    };
  });
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape(), Array(a.values().max(0.0)));
  const Data da = a.handle();
  return record({&a}, std::move(out), [da](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] >= 0)
        tp.grad_ref(p[0]) +=
            tp.node(self).grad * (da->values > 0.0).cast<double>();
    };
  });
}

Tensor softmax(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeMismatch("softmax: need 2-D");
  const int r = a.dim(0), c = a.dim(1);
  Array y(a.size());
  for (int i = 0; i < r; ++i) {
    const auto row = a.values().segment(static_cast<int64_t>(i) * c, c);
    const double m = row.maxCoeff();
    Array e = (row - m).exp();
    y.segment(static_cast<int64_t>(i) * c, c) = e / e.sum();
  }
  Tensor out({r, c}, std::move(y));
  const Data dout = out.handle();
  return record({&a}, std::move(out), [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] < 0) return;
      const Array& g = tp.node(self).grad;
      Array& dst = tp.grad_ref(p[0]);
      for (int i = 0; i < r; ++i) {
        const auto yi = dout->values.segment(static_cast<int64_t>(i) * c, c);
        const auto gi = g.segment(static_cast<int64_t>(i) * c, c);
        const double dot = (gi * yi).sum();
        dst.segment(static_cast<int64_t>(i) * c, c) += yi * (gi - dot);
      }
    };
  });
}

Tensor gather(const Tensor& a, const std::vector<int>& indices) {
  const int c = a.cols(), r = a.rows();
  for (int idx : indices)
    if (idx < 0 || idx >= r) throw ShapeMismatch("gather: index out of range");
  Array v(static_cast<int64_t>(indices.size()) * c);
  for (std::size_t i = 0; i < indices.size(); ++i)
    v.segment(static_cast<int64_t>(i) * c, c) =
        a.values().segment(static_cast<int64_t>(indices[i]) * c, c);
  std::vector<int> shape = a.shape();
  shape[0] = static_cast<int>(indices.size());
  Tensor out(shape, std::move(v));
  return record({&a}, std::move(out), [indices, c](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] < 0) return;
      const Array& g = tp.node(self).grad;
      Array& dst = tp.grad_ref(p[0]);
      for (std::size_t i = 0; i < indices.size(); ++i)
        dst.segment(static_cast<int64_t>(indices[i]) * c, c) +=
            g.segment(static_cast<int64_t>(i) * c, c);
    };
  });
}

Tensor scatter_add(const Tensor& a, const std::vector<int>& indices,
                   int out_rows) {
  if (static_cast<int>(indices.size()) != a.rows())
    throw ShapeMismatch("scatter_add: one index per row");
  const int c = a.cols();
  for (int idx : indices)
    if (idx < 0 || idx >= out_rows)
      throw ShapeMismatch("scatter_add: index out of range");
  Array v = Array::Zero(static_cast<int64_t>(out_rows) * c);
  for (std::size_t i = 0; i < indices.size(); ++i)
    v.segment(static_cast<int64_t>(indices[i]) * c, c) +=
        a.values().segment(static_cast<int64_t>(i) * c, c);
  std::vector<int> shape = a.shape();
  shape[0] = out_rows;
  Tensor out(shape, std::move(v));
  return record({&a}, std::move(out), [indices, c](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      if (p[0] < 0) return;
      const Array& g = tp.node(self).grad;
      Array& dst = tp.grad_ref(p[0]);
      for (std::size_t i = 0; i < indices.size(); ++i)
        dst.segment(static_cast<int64_t>(i) * c, c) +=
            g.segment(static_cast<int64_t>(indices[i]) * c, c);
    };
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (a.ndim() != 2 || s.size() != a.dim(0))
    throw ShapeMismatch("scale_rows: scale must have one entry per row");
  const int r = a.dim(0), c = a.dim(1);
  Array v(a.size());
  for (int i = 0; i < r; ++i)
    v.segment(static_cast<int64_t>(i) * c, c) =
        a.values().segment(static_cast<int64_t>(i) * c, c) * s.values()[i];
  Tensor out({r, c}, std::move(v));
  const Data da = a.handle(), ds = s.handle();
  return record({&a, &s}, std::move(out), [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      const Array& g = tp.node(self).grad;
      if (p[0] >= 0) {
        Array& dst = tp.grad_ref(p[0]);
        for (int i = 0; i < r; ++i)
          dst.segment(static_cast<int64_t>(i) * c, c) +=
              g.segment(static_cast<int64_t>(i) * c, c) * ds->values[i];
      }
      if (p[1] >= 0) {
        Array& dst = tp.grad_ref(p[1]);
        for (int i = 0; i < r; ++i)
          dst[i] += (g.segment(static_cast<int64_t>(i) * c, c) *
                     da->values.segment(static_cast<int64_t>(i) * c, c))
                        .sum();
      }
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.ndim() != 2 || gain.size() != x.dim(1) || bias.size() != x.dim(1))
    throw ShapeMismatch("layer_norm: affine params must match columns");
  const int r = x.dim(0), c = x.dim(1);
  Array xhat(x.size());
  Array inv_std(r);
  for (int i = 0; i < r; ++i) {
    const auto row = x.values().segment(static_cast<int64_t>(i) * c, c);
    const double mu = row.mean();
    const double var = (row - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.segment(static_cast<int64_t>(i) * c, c) = (row - mu) * inv_std[i];
  }
  Array v(x.size());
  for (int i = 0; i < r; ++i)
    v.segment(static_cast<int64_t>(i) * c, c) =
        xhat.segment(static_cast<int64_t>(i) * c, c) * gain.values() +
        bias.values();
  Tensor out({r, c}, std::move(v));
  const Data dgain = gain.handle();
  auto xh = std::make_shared<Array>(std::move(xhat));
  auto is = std::make_shared<Array>(std::move(inv_std));
  return record({&x, &gain, &bias}, std::move(out),
                [=](const std::vector<int>& p) {
    return [=](Tape& tp, int self) {
      const Array& g = tp.node(self).grad;
      for (int i = 0; i < r; ++i) {
        const auto gi = g.segment(static_cast<int64_t>(i) * c, c);
        const auto xhi = xh->segment(static_cast<int64_t>(i) * c, c);
        if (p[0] >= 0) {
          // d/dx of (x - mu)/std with the mean/variance paths included.
          const Array dxhat = gi * dgain->values;
          const double m1 = dxhat.mean();
          const double m2 = (dxhat * xhi).mean();
          tp.grad_ref(p[0]).segment(static_cast<int64_t>(i) * c, c) +=
              (*is)[i] * (dxhat - m1 - xhi * m2);
        }
        if (p[1] >= 0) tp.grad_ref(p[1]) += gi * xhi;
        if (p[2] >= 0) tp.grad_ref(p[2]) += gi;
      }
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor custom_node(const std::vector<Tensor>& inputs, std::vector<int> shape,
                   Array values, CustomBackward backward_fn) {
  if (shape_size(shape) != values.size())
    throw ShapeMismatch("custom_node: values do not match shape");
  Tensor out(std::move(shape), std::move(values));
  std::vector<const Tensor*> ptr;
  for (const Tensor& t : inputs) ptr.push_back(&t);
  bool rec = false;
  for (const Tensor* t : ptr)
    if (should_record({t})) rec = true;
  if (!rec) return out;

  Tape& tape = *Tape::active();
  std::vector<int> parents;
  std::vector<int64_t> sizes;
  for (const Tensor& t : inputs) {
    parents.push_back(tape.node_of(t));
    sizes.push_back(t.size());
  }
  auto backward = [parents, sizes, fn = std::move(backward_fn)](Tape& tp,
                                                                int self) {
    std::vector<Array> grads = fn(tp.node(self).grad);
    if (grads.size() != parents.size())
      throw ArityMismatch("custom_node backward returned wrong arity");
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i] < 0) continue;
      if (grads[i].size() != sizes[i])
        throw ShapeMismatch("custom_node backward gradient shape");
      tp.grad_ref(parents[i]) += grads[i];
    }
  };
  const int id =
      tape.add_node(parents, out.shape(), out.size(), std::move(backward));
  tape.tag_output(out, id);
  return out;
}

}  // namespace rodo
