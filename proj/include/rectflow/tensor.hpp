#pragma once

// Dense row-major f64 tensors with reverse-mode automatic differentiation.
//
// Every primitive records a backward rule on a thread-local tape when any
// input participates in gradients. backward(loss) replays the tape in
// reverse recording order, accumulates into each reachable leaf's grad
// buffer, and clears the tape. Non-finite values raise NumericFault at the
// op that produced them.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rectflow/errors.hpp"

namespace rectflow {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::function<void()> backward;  // accumulates into parent grads

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Lightweight shared handle to a tensor node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  std::size_t size() const { return node()->values.size(); }
  bool requires_grad() const { return node()->requires_grad; }

  const std::vector<double>& values() const { return node()->values; }
  // Leaf-only in-place mutation (optimizer updates, test perturbations).
  std::vector<double>& mutable_values() { return node()->values; }

  bool has_grad() const { return !node()->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Scalar access; contract error unless the tensor has exactly one element.
  double item() const;

  detail::Node* node() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Ops;
};

// Recording tape. One per thread; training steps never span threads.
class Tape {
 public:
  static Tape& current();

  void record(std::shared_ptr<detail::Node> node) {
    nodes_.push_back(std::move(node));
  }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const std::vector<std::shared_ptr<detail::Node>>& nodes() const {
    return nodes_;
  }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

bool grad_enabled();

// Disables recording within a scope; results are detached constants.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Elementwise with standard right-aligned broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// 2-D matrix product [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor transpose(const Tensor& a);  // 2-D only
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t len);
Tensor broadcast_to(const Tensor& a, const Shape& target);

// Reverse-mode sweep from a scalar loss. Populates grad on every
// requires_grad leaf reachable from the loss, then clears the tape.
void backward(const Tensor& loss);

}  // namespace rectflow
