#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rodo/errors.hpp"

namespace rodo {

class Tape;

using Array = Eigen::ArrayXd;
using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

namespace detail {
struct TensorData {
  std::vector<int> shape;
  Array values;  // row-major flat
  bool requires_grad = false;
  // Lazily assigned tape node; stale entries detected via the tape epoch.
  Tape* tape = nullptr;
  uint64_t epoch = 0;
  int node = -1;
};
}  // namespace detail

// Dense float64 tensor participating in define-by-run reverse-mode autodiff.
// Values are immutable once the tensor has been used on a tape.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<detail::TensorData>()) {}
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);
  Tensor(std::vector<int> shape, Array values);
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor from_matrix(const Eigen::MatrixXd& m);

  const std::vector<int>& shape() const { return data_->shape; }
  int dim(int i) const { return data_->shape[i]; }
  int ndim() const { return static_cast<int>(data_->shape.size()); }
  int64_t size() const { return data_->values.size(); }
  int rows() const { return ndim() == 0 ? 0 : data_->shape[0]; }
  int cols() const;  // product of trailing dims (1 for vectors)

  const Array& values() const { return data_->values; }
  Array& mutable_values() { return data_->values; }
  double operator[](int64_t i) const { return data_->values[i]; }
  double at(int r, int c) const { return data_->values[r * cols() + c]; }
  double item() const;
  Eigen::MatrixXd to_matrix() const;

  Tensor& set_requires_grad(bool on) {
    data_->requires_grad = on;
    return *this;
  }
  bool requires_grad() const { return data_->requires_grad; }
  bool defined() const { return !data_->shape.empty(); }

  const std::shared_ptr<detail::TensorData>& handle() const { return data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
};

// Backward closure for custom nodes: receives dL/dout, returns one dL/din per
// input (shapes must match the inputs).
using CustomBackward = std::function<std::vector<Array>(const Array&)>;

// Dynamic tape: creation order is a topological order because every op's
// inputs exist before its output. Becomes the thread's active tape on
// construction (RAII).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Walks the tape backwards from a scalar loss, accumulating gradients.
  void backward(const Tensor& loss);

  // Gradient of a leaf/intermediate after backward; zeros if unreached.
  Array grad(const Tensor& t) const;
  bool has_grad(const Tensor& t) const;

  uint64_t epoch() const { return epoch_; }
  std::size_t node_count() const { return nodes_.size(); }

  // --- recording interface used by ops ---
  struct Node {
    std::vector<int> parents;
    std::function<void(Tape&, int)> backward;  // node id -> accumulate parents
    std::vector<int> shape;
    int64_t size = 0;
    Array grad;  // lazily allocated
  };

  // Returns the node id of t on this tape, registering a leaf when the
  // tensor requires grad; -1 for constants.
  int node_of(const Tensor& t);
  int add_node(std::vector<int> parents, std::vector<int> shape, int64_t size,
               std::function<void(Tape&, int)> backward);
  void tag_output(const Tensor& t, int node);
  Array& grad_ref(int node);
  Node& node(int id) { return nodes_[id]; }

 private:
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  uint64_t epoch_ = 0;
};

// True when an active tape exists and any input participates in grad.
bool should_record(std::initializer_list<const Tensor*> inputs);

int64_t shape_size(const std::vector<int>& shape);

}  // namespace rodo
