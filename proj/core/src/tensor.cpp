#include "ctcnat/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "ctcnat/errors.hpp"

namespace ctcnat {

namespace {
thread_local GradTape* g_current_tape = nullptr;
}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<Storage>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for shape " + shape_string(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return impl_->shape[1];
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return impl_->data.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data.at(row * cols() + col);
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::is_leaf() const { return impl_->leaf; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }
void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
  t.impl_->grad = impl_->grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------

void GradTape::record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward) {
  for (const auto& in : inputs) {
    if (in.requires_grad() && in.is_leaf()) leaves_.emplace(in.id(), in);
  }
  output.impl_->requires_grad = true;
  output.impl_->leaf = false;
  records_.push_back(Record{std::move(inputs), output, std::move(backward)});
}

void GradTape::backward(const Tensor& loss, double seed) {
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a single-element loss, got " + shape_string(loss.shape()));
  }
  grad_buffer(loss)[0] += seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (grads_.find(it->output.id()) == grads_.end()) continue;
    it->backward(*this);
  }
}

std::span<double> GradTape::grad_buffer(const Tensor& t) {
  auto [it, inserted] = grads_.try_emplace(t.id());
  if (inserted) it->second.assign(t.size(), 0.0);
  return it->second;
}

std::span<const double> GradTape::gradient(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return it->second;
}

void GradTape::accumulate_into_leaves() {
  for (auto& [key, leaf] : leaves_) {
    auto g = gradient(leaf);
    if (g.empty()) continue;
    auto dst = leaf.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

void GradTape::clear() {
  records_.clear();
  grads_.clear();
  leaves_.clear();
}

GradTape* GradTape::current() noexcept { return g_current_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_current_tape) { g_current_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_current_tape = previous_; }

}  // namespace ctcnat
