// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations.
//
// Binary elementwise ops broadcast numpy-style: shapes are aligned on their
// trailing dimensions and size-1 dimensions expand.

#pragma once

#include <array>
#include <optional>

#include "recokd/tensor.hpp"

namespace recokd {

using Triple = std::array<std::size_t, 3>;

enum class UnaryOp { abs, exp, log, relu, square, neg };
enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean, max };

/// Broadcast result shape; throws ShapeError naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(UnaryOp op, const Tensor& a);
/// Division raises DegenerateInputError listing positions where |b| < 1e-12.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor abs(const Tensor& a) { return elementwise(UnaryOp::abs, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryOp::exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(UnaryOp::log, a); }
inline Tensor relu(const Tensor& a) { return elementwise(UnaryOp::relu, a); }
inline Tensor square(const Tensor& a) { return elementwise(UnaryOp::square, a); }
inline Tensor neg(const Tensor& a) { return elementwise(UnaryOp::neg, a); }

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Reduction over `axes`. Max routes the gradient to the first maximal element.
Tensor reduce(ReduceOp op, const Tensor& a, const Axes& axes, bool keep_dims = false);
inline Tensor sum(const Tensor& a, const Axes& axes, bool keep_dims = false) {
  return reduce(ReduceOp::sum, a, axes, keep_dims);
}
inline Tensor mean(const Tensor& a, const Axes& axes, bool keep_dims = false) {
  return reduce(ReduceOp::mean, a, axes, keep_dims);
}
inline Tensor max(const Tensor& a, const Axes& axes, bool keep_dims = false) {
  return reduce(ReduceOp::max, a, axes, keep_dims);
}
/// Sum of every element, as a shape-[1] tensor.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// softmax(a / T) normalized jointly over `axes`, with max subtraction.
Tensor softmax_temperature(const Tensor& a, const Axes& axes, double temperature);
Tensor log_softmax(const Tensor& a, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
/// Slice `index` along axis 0 and drop that axis.
Tensor select(const Tensor& a, std::size_t index);
Tensor stack(const std::vector<Tensor>& parts);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Same values, no gradient path back to `a`.
Tensor detach(const Tensor& a);

/// Cross-correlation of x[N,C,D,H,W] with w[O,C,kd,kh,kw].
Tensor conv3d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              Triple stride = {1, 1, 1}, Triple padding = {0, 0, 0});

/// Nearest-neighbour upsampling of the three spatial axes of x[N,C,D,H,W].
Tensor upsample_nearest(const Tensor& x, Triple factor);

/// Decoder upsampling: nearest-neighbour by `factor`, then a stride-1
/// "same"-padded conv3d with `w` (odd kernel).
Tensor upsample_conv3d(const Tensor& x, Triple factor, const Tensor& w,
                       const std::optional<Tensor>& bias);

/// Group normalization of x[N,C,...] with per-channel affine gain/bias.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

}  // namespace recokd
