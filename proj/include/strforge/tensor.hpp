#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "strforge/errors.hpp"

namespace strforge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves and untracked results
};

// One recorded operation. `backward` receives the gradient of the node's
// output and accumulates into the inputs it was built from.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const std::vector<double>& grad_out)> backward;
};

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode tracking.
///
/// Copies share storage (handle semantics); use `clone()` for a deep copy.
/// Gradients accumulate across `backward()` calls on leaves until
/// `zero_grad()` is called.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse sweep from a scalar. Non-leaf gradients are reset first so a
  /// second call adds exactly one more gradient into the leaves.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  bool is_leaf() const;
  const std::string& op_name() const;

  // Graph plumbing for op implementations.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs, std::string op,
                            std::function<void(const std::vector<double>&)> backward);
  static void accumulate(const std::shared_ptr<detail::TensorImpl>& impl,
                         std::span<const double> delta);
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace strforge
