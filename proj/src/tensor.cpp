#include "strforge/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace strforge {

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw StateError("use of undefined tensor");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) throw StateError("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

const std::string& Tensor::op_name() const {
  static const std::string leaf = "leaf";
  return impl_ && impl_->node ? impl_->node->op : leaf;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                           std::string op, std::function<void(const std::vector<double>&)> backward) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool track = grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                                    [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    impl->requires_grad = true;
    auto node = std::make_shared<detail::Node>();
    node->op = std::move(op);
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.impl_);
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

void Tensor::accumulate(const std::shared_ptr<detail::TensorImpl>& impl, std::span<const double> delta) {
  if (!impl || !impl->requires_grad) return;
  if (impl->grad.empty()) {
    impl->grad.assign(delta.begin(), delta.end());
    return;
  }
  for (std::size_t i = 0; i < delta.size(); ++i) impl->grad[i] += delta[i];
}

void Tensor::backward() const {
  if (!impl_) throw StateError("backward on undefined tensor");
  if (numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(shape()));
  if (!impl_->requires_grad) throw StateError("loss is not connected to any tensor requiring grad");

  // Iterative post-order DFS gives a topological order of the recorded DAG.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (cur->node && next < cur->node->inputs.size()) {
      detail::TensorImpl* child = cur->node->inputs[next++].get();
      if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  for (auto* t : order) {
    if (t->node) t->grad.clear();
  }
  const double seed = 1.0;
  accumulate(impl_, std::span<const double>(&seed, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (!t->node || t->grad.empty()) continue;
    t->node->backward(t->grad);
  }
}

}  // namespace strforge
