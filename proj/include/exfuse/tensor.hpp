/* Copyright 2026 The ExFuse-CPP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "exfuse/errors.hpp"

namespace exfuse {

// (batch, channel, height, width).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

enum class Precision { single, double_ };

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == sizeof(double) ? Precision::double_ : Precision::single;
}

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows here
  bool requires_grad = false;
  bool consumed = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grad buffers.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return !backward && !consumed; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

bool grad_mode_enabled();
void set_grad_mode(bool enabled);

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled()) { detail::set_grad_mode(false); }
  ~NoGradGuard() { detail::set_grad_mode(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense 4-D tensor with shared ownership of its storage. Copies alias the same
// node; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;
  using BackwardFn = std::function<void(Node&)>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<Node>()) {
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
  }
  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return node_->data[index(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return node_->data[index(n, c, h, w)];
  }
  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = node_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    node_->requires_grad = value;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }
  bool is_leaf() const { return node_->is_leaf(); }
  const std::string& op_name() const { return node_->op; }

  // Fresh leaf holding a copy of the values, outside any graph.
  Tensor clone() const { return Tensor(shape(), node_->data); }
  Tensor detach() const { return clone(); }

  // Builds an operation result. Records parents and the backward rule only
  // when gradient mode is on and at least one parent requires a gradient.
  static Tensor make_result(std::string op, Shape shape, std::vector<T> values,
                            std::vector<Tensor> parents, BackwardFn backward);

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode differentiation from a scalar loss. Leaf gradients
// accumulate across calls; intermediate gradients are transient. Without
// retain_graph the recorded backward rules are released and a second call on
// the same graph raises GraphError.
template <typename T>
void backward(const Tensor<T>& loss, bool retain_graph = false);

template <typename T>
Tensor<T> Tensor<T>::make_result(std::string op, Shape shape, std::vector<T> values,
                                 std::vector<Tensor> parents, BackwardFn backward_fn) {
  for (const T& v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + op);
  }
  Tensor out(shape, std::move(values));
  out.node_->op = std::move(op);
  if (!detail::grad_mode_enabled()) return out;
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (!needs_grad) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (const Tensor& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward_fn);
  return out;
}

// Accumulates `delta` into the gradient of `parent` if it participates.
template <typename T>
std::vector<T>* grad_sink(detail::Node<T>& parent) {
  return parent.requires_grad ? &parent.ensure_grad() : nullptr;
}

}  // namespace exfuse
