// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drat {

using Shape = std::vector<std::size_t>;

/// Raised when an operation's shape or argument contract is not met.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf reaches an operation boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

#define DRAT_REQUIRE(cond, msg)                                   \
  do {                                                            \
    if (!(cond)) throw ::drat::ContractViolation(std::string(msg)); \
  } while (0)

struct Node;

/// Reads the node's own value and gradient and accumulates into its parents.
using BackwardFn = std::function<void(const Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  /// Gradient buffer, allocated (zeroed) on first use.
  std::span<double> grad_buffer();
};

/// Dense row-major tensor of 64-bit reals with reverse-mode gradient support.
///
/// A Tensor is a cheap handle; copies share the same node. Values are
/// immutable after construction except through data_mut(), which is meant for
/// leaves (optimizer updates, finite-difference probing).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> data_mut() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  void zero_grad();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Copy of the values with no history.
  Tensor detach() const;
  /// Same values viewed under a new shape of equal size (copies, keeps history).
  Tensor reshape(Shape shape) const;

  /// Seeds d(self)/d(self) = 1 for a single-element tensor and runs reverse mode.
  void backward() const;
  void backward(std::span<const double> seed) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);
  std::shared_ptr<Node> node_;
};

/// Wraps an op result. History is recorded only when some parent requires a
/// gradient and no NoGradGuard is active. Throws NumericError on non-finite data.
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& parents,
                   BackwardFn backward);

/// Throws NumericError if any value is NaN or Inf.
void require_finite(std::span<const double> values, const char* where);

bool grad_enabled();

/// Disables history recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace drat
