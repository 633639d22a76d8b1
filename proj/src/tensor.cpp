// SPDX-License-Identifier: Apache-2.0
#include "drat/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace drat {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void require_finite(std::span<const double> values, const char* where) {
  // NaN and Inf are exactly the values with an all-ones exponent; the
  // integer form of the test vectorizes.
  constexpr std::uint64_t exponent = 0x7FF0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & exponent) == exponent);
  if (bad) throw NumericError(std::string("non-finite value in ") + where);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) DRAT_REQUIRE(d > 0, "tensor extents must be positive, got " + shape_str(shape));
  DRAT_REQUIRE(shape_size(shape) == data.size(),
               "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  require_finite(data, "tensor construction");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  DRAT_REQUIRE(axis < rank(), "axis out of range");
  return node_->shape[axis];
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

double Tensor::item() const {
  DRAT_REQUIRE(size() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  DRAT_REQUIRE(index.size() == rank(), "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    DRAT_REQUIRE(i < node_->shape[axis], "index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

Tensor Tensor::detach() const { return from(node_->shape, node_->data, false); }

Tensor Tensor::reshape(Shape shape) const {
  DRAT_REQUIRE(shape_size(shape) == size(),
               "cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  auto self = node_;
  return make_result(std::move(shape), node_->data, {*this}, [self](const Node& out) {
    auto dst = self->grad_buffer();
    for (std::size_t i = 0; i < out.grad.size(); ++i) dst[i] += out.grad[i];
  });
}

void Tensor::backward() const {
  DRAT_REQUIRE(size() == 1, "backward() without a seed needs a scalar output");
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  DRAT_REQUIRE(seed.size() == size(), "backward seed has wrong length");
  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto root = node_->grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) root[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& parents,
                   BackwardFn backward) {
  require_finite(data, "operation output");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace drat
