// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node. Ops create new nodes that keep
// their parents alive only when some input requires a gradient, so inference
// passes do not retain the graph.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "recokd/errors.hpp"

namespace recokd {

using Shape = std::vector<std::size_t>;
using Axes = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Mutable access for leaves (parameters, inputs). Mutating an interior node
  /// invalidates any graph built on top of it.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate additively
  /// across calls; the caller zeroes them.
  void backward() const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds the result node of an op. Parents and the backward rule are kept
/// only if some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn);

}  // namespace detail

/// Records the branch taken by every non-smooth op (relu, abs, max) while in
/// scope. Finite-difference checkers compare patterns between the +h and -h
/// evaluations to detect coordinates that straddle a kink.
class KinkRecorder {
 public:
  KinkRecorder();
  ~KinkRecorder();
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;

  const std::vector<std::uint8_t>& pattern() const { return pattern_; }
  static void record(std::uint8_t branch);
  static bool active();

 private:
  std::vector<std::uint8_t> pattern_;
  KinkRecorder* previous_;
};

}  // namespace recokd
