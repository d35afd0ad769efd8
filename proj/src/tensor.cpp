#include "rodo/tensor.hpp"

#include <atomic>

namespace rodo {

namespace {
thread_local Tape* g_active_tape = nullptr;
std::atomic<uint64_t> g_epoch_counter{1};
}  // namespace

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeMismatch("non-positive dimension");
    n *= d;
  }
  return shape.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : data_(std::make_shared<detail::TensorData>()) {
  data_->shape = std::move(shape);
  data_->values = Array::Constant(shape_size(data_->shape), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : data_(std::make_shared<detail::TensorData>()) {
  data_->shape = std::move(shape);
  if (shape_size(data_->shape) != static_cast<int64_t>(values.size()))
    throw ShapeMismatch("value count does not match shape");
  data_->values = Eigen::Map<const Array>(values.data(), values.size());
}

Tensor::Tensor(std::vector<int> shape, Array values)
    : data_(std::make_shared<detail::TensorData>()) {
  data_->shape = std::move(shape);
  if (shape_size(data_->shape) != values.size())
    throw ShapeMismatch("value count does not match shape");
  data_->values = std::move(values);
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t;
  t.data_->shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
  MatrixRM rm = m;
  t.data_->values = Eigen::Map<const Array>(rm.data(), rm.size());
  return t;
}

int Tensor::cols() const {
  if (ndim() <= 1) return 1;
  int64_t c = 1;
  for (int i = 1; i < ndim(); ++i) c *= data_->shape[i];
  return static_cast<int>(c);
}

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item() on non-scalar tensor");
  return data_->values[0];
}

Eigen::MatrixXd Tensor::to_matrix() const {
  const int r = rows(), c = cols();
  return ConstMapRM(data_->values.data(), r, c);
}

Tape::Tape() : epoch_(g_epoch_counter.fetch_add(1)) {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::node_of(const Tensor& t) {
  auto& d = *t.handle();
  if (d.tape == this && d.epoch == epoch_ && d.node >= 0) return d.node;
  if (!d.requires_grad) return -1;
  const int id = add_node({}, d.shape, d.values.size(), nullptr);
  d.tape = this;
  d.epoch = epoch_;
  d.node = id;
  return id;
}

int Tape::add_node(std::vector<int> parents, std::vector<int> shape,
                   int64_t size, std::function<void(Tape&, int)> backward) {
  Node n;
  n.parents = std::move(parents);
  n.shape = std::move(shape);
  n.size = size;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::tag_output(const Tensor& t, int node) {
  auto& d = *t.handle();
  d.tape = this;
  d.epoch = epoch_;
  d.node = node;
}

Array& Tape::grad_ref(int node) {
  Node& n = nodes_[node];
  if (n.grad.size() == 0) n.grad = Array::Zero(n.size);
  return n.grad;
}

bool Tape::has_grad(const Tensor& t) const {
  const auto& d = *t.handle();
  return d.tape == this && d.epoch == epoch_ && d.node >= 0 &&
         nodes_[d.node].grad.size() > 0;
}

Array Tape::grad(const Tensor& t) const {
  const auto& d = *t.handle();
  if (d.tape != this || d.epoch != epoch_ || d.node < 0)
    return Array::Zero(d.values.size());
  const Node& n = nodes_[d.node];
  if (n.grad.size() == 0) return Array::Zero(d.values.size());
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw NotScalar("backward needs a scalar loss");
  const auto& d = *loss.handle();
  if (d.tape != this || d.epoch != epoch_ || d.node < 0)
    throw Error("loss is not recorded on this tape");
  grad_ref(d.node)[0] += 1.0;
  for (int id = d.node; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    const auto& d = *t->handle();
    if (d.requires_grad) return true;
    if (d.tape == tape && d.epoch == tape->epoch() && d.node >= 0) return true;
  }
  return false;
}

}  // namespace rodo
