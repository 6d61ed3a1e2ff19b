// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace recokd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape, std::size_t n) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero dimension");
  }
  if (recokd::numel(shape) != n) {
    throw ShapeError("tensor shape " + to_string(shape) + " does not match " + std::to_string(n) +
                     " data elements");
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = recokd::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape, data.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= dim()) throw InvalidArgumentError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return shape()[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor of shape " + to_string(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw InvalidArgumentError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  if (node_->is_leaf()) {
    node_->ensure_grad()[0] += 1.0;
    return;
  }
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf()) continue;
    node->backward_fn(*node);
    // Interior gradients are scratch space; drop them once propagated.
    std::vector<double>().swap(node->grad);
  }
}

namespace {
thread_local KinkRecorder* g_recorder = nullptr;
}

KinkRecorder::KinkRecorder() : previous_(g_recorder) { g_recorder = this; }
KinkRecorder::~KinkRecorder() { g_recorder = previous_; }
void KinkRecorder::record(std::uint8_t branch) {
  if (g_recorder) g_recorder->pattern_.push_back(branch);
}
bool KinkRecorder::active() { return g_recorder != nullptr; }

}  // namespace recokd
