// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace recokd {

using detail::make_result;
using detail::Node;

namespace {

// Strides of `operand` expressed against the dimensions of `out`; broadcast
// and missing leading dimensions get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  std::size_t offset = out.size() - operand.size();
  for (std::size_t i = operand.size(); i-- > 0;) {
    strides[i + offset] = operand[i] == 1 ? 0 : stride;
    stride *= operand[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) in row-major output order.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t nd = out.size();
  const std::size_t total = numel(out);
  const std::size_t inner = out[nd - 1];
  const std::size_t a_step = sa[nd - 1], b_step = sb[nd - 1];
  std::vector<std::size_t> idx(nd, 0);
  std::size_t a_base = 0, b_base = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, a_base + k * a_step, b_base + k * b_step);
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      a_base += sa[d];
      b_base += sb[d];
      if (idx[d] < out[d]) break;
      a_base -= sa[d] * out[d];
      b_base -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

void validate_axes(const Tensor& a, const Axes& axes) {
  std::vector<bool> used(a.dim(), false);
  for (auto ax : axes) {
    if (ax >= a.dim() || used[ax]) {
      throw InvalidArgumentError("invalid reduction axis " + std::to_string(ax) + " for shape " +
                                 to_string(a.shape()));
    }
    used[ax] = true;
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shape mismatch: cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  const auto& x = a.data();
  std::vector<double> y(x.size());
  const bool rec = KinkRecorder::active();
  switch (op) {
    case UnaryOp::abs:
      for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = std::abs(x[i]);
        if (rec) KinkRecorder::record(x[i] > 0 ? 1 : (x[i] < 0 ? 2 : 0));
      }
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) {
          throw DegenerateInputError("log of non-positive value at position " + std::to_string(i));
        }
        y[i] = std::log(x[i]);
      }
      break;
    case UnaryOp::relu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] > 0.0 ? x[i] : 0.0;
        if (rec) KinkRecorder::record(x[i] > 0.0 ? 1 : 0);
      }
      break;
    case UnaryOp::square:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
      break;
    case UnaryOp::neg:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
      break;
  }

  static constexpr const char* names[] = {"abs", "exp", "log", "relu", "square", "neg"};
  std::vector<double> cached;
  if (a.requires_grad() && op == UnaryOp::exp) cached = y;
  return make_result(a.shape(), std::move(y), names[static_cast<int>(op)], {a},
                     [op, cached = std::move(cached)](Node& self) {
                       Node& p = *self.parents[0];
                       auto& g = p.ensure_grad();
                       const auto& x = p.data;
                       const auto& gy = self.grad;
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         double d = 0.0;
                         switch (op) {
                           case UnaryOp::abs: d = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0); break;
                           case UnaryOp::exp: d = cached[i]; break;
                           case UnaryOp::log: d = 1.0 / x[i]; break;
                           case UnaryOp::relu: d = x[i] > 0 ? 1.0 : 0.0; break;
                           case UnaryOp::square: d = 2.0 * x[i]; break;
                           case UnaryOp::neg: d = -1.0; break;
                         }
                         g[i] += gy[i] * d;
                       }
                     });
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out);
  auto sb = broadcast_strides(b.shape(), out);
  const auto& x = a.data();
  const auto& z = b.data();

  if (op == BinaryOp::div) {
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (std::abs(z[i]) < 1e-12) bad.push_back(i);
    }
    if (!bad.empty()) {
      std::ostringstream os;
      os << "division by |b| < 1e-12 at " << bad.size() << " position(s) of " << to_string(b.shape())
         << ", first:";
      for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 8); ++i) os << ' ' << bad[i];
      throw DegenerateInputError(os.str());
    }
  }

  std::vector<double> y(numel(out));
  const bool same = a.shape() == b.shape();
  auto apply = [&](auto&& fn) {
    if (same) {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = fn(x[i], z[i]);
    } else {
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = fn(x[ia], z[ib]); });
    }
  };
  switch (op) {
    case BinaryOp::add: apply([](double u, double v) { return u + v; }); break;
    case BinaryOp::sub: apply([](double u, double v) { return u - v; }); break;
    case BinaryOp::mul: apply([](double u, double v) { return u * v; }); break;
    case BinaryOp::div: apply([](double u, double v) { return u / v; }); break;
  }

  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  return make_result(out, std::move(y), names[static_cast<int>(op)], {a, b},
                     [op, out, sa, sb, same](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const auto& gy = self.grad;
                       std::vector<double>* ga = pa.requires_grad ? &pa.ensure_grad() : nullptr;
                       std::vector<double>* gb = pb.requires_grad ? &pb.ensure_grad() : nullptr;
                       const auto& x = pa.data;
                       const auto& z = pb.data;
                       auto body = [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         double g = gy[o];
                         switch (op) {
                           case BinaryOp::add:
                             if (ga) (*ga)[ia] += g;
                             if (gb) (*gb)[ib] += g;
                             break;
                           case BinaryOp::sub:
                             if (ga) (*ga)[ia] += g;
                             if (gb) (*gb)[ib] -= g;
                             break;
                           case BinaryOp::mul:
                             if (ga) (*ga)[ia] += g * z[ib];
                             if (gb) (*gb)[ib] += g * x[ia];
                             break;
                           case BinaryOp::div:
                             if (ga) (*ga)[ia] += g / z[ib];
                             if (gb) (*gb)[ib] -= g * x[ia] / (z[ib] * z[ib]);
                             break;
                         }
                       };
                       if (same) {
                         for (std::size_t i = 0; i < gy.size(); ++i) body(i, i, i);
                       } else {
                         for_each_broadcast(out, sa, sb, body);
                       }
                     });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> y(a.data().begin(), a.data().end());
  for (auto& v : y) v *= factor;
  return make_result(a.shape(), std::move(y), "scale", {a}, [factor](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> y(a.data().begin(), a.data().end());
  for (auto& v : y) v += value;
  return make_result(a.shape(), std::move(y), "add_scalar", {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor reduce(ReduceOp op, const Tensor& a, const Axes& axes, bool keep_dims) {
  validate_axes(a, axes);
  const Shape& in = a.shape();
  Shape kept = in;
  for (auto ax : axes) kept[ax] = 1;
  Shape out;
  if (keep_dims) {
    out = kept;
  } else {
    for (std::size_t d = 0; d < in.size(); ++d) {
      if (std::find(axes.begin(), axes.end(), d) == axes.end()) out.push_back(in[d]);
    }
    if (out.empty()) out = {1};
  }
  // Output index of each input element: broadcast strides of `kept` against `in`.
  auto so = broadcast_strides(kept, in);
  std::vector<std::size_t> zero(in.size(), 0);
  const std::size_t n_out = numel(kept);
  const std::size_t count = numel(in) / n_out;
  const auto& x = a.data();

  std::vector<double> y(n_out, op == ReduceOp::max ? -INFINITY : 0.0);
  std::vector<std::size_t> arg;
  if (op == ReduceOp::max) {
    arg.assign(n_out, 0);
    std::vector<bool> init(n_out, false);
    for_each_broadcast(in, zero, so, [&](std::size_t i, std::size_t, std::size_t o) {
      if (!init[o] || x[i] > y[o]) {
        y[o] = x[i];
        arg[o] = i;
        init[o] = true;
      }
    });
    if (KinkRecorder::active()) {
      for (auto i : arg) KinkRecorder::record(static_cast<std::uint8_t>(i & 0xff));
    }
  } else {
    for_each_broadcast(in, zero, so, [&](std::size_t i, std::size_t, std::size_t o) { y[o] += x[i]; });
    if (op == ReduceOp::mean) {
      for (auto& v : y) v /= static_cast<double>(count);
    }
  }

  static constexpr const char* names[] = {"sum", "mean", "max"};
  return make_result(out, std::move(y), names[static_cast<int>(op)], {a},
                     [op, in, so, zero, count, arg = std::move(arg)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const auto& gy = self.grad;
                       if (op == ReduceOp::max) {
                         for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += gy[o];
                         return;
                       }
                       double f = op == ReduceOp::mean ? 1.0 / static_cast<double>(count) : 1.0;
                       for_each_broadcast(in, zero, so, [&](std::size_t i, std::size_t, std::size_t o) { g[i] += f * gy[o]; });
                     });
}

Tensor sum_all(const Tensor& a) {
  Axes axes(a.dim());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reshape(sum(a, axes), {1});
}

Tensor mean_all(const Tensor& a) {
  Axes axes(a.dim());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reshape(mean(a, axes), {1});
}

Tensor softmax_temperature(const Tensor& a, const Axes& axes, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgumentError("softmax temperature must be positive, got " + std::to_string(temperature));
  }
  validate_axes(a, axes);
  // Softmax is shift invariant, so detaching the subtracted max is exact.
  Tensor shifted = sub(a, detach(max(a, axes, true)));
  Tensor e = exp(scale(shifted, 1.0 / temperature));
  return div(e, sum(e, axes, true));
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  validate_axes(a, {axis});
  Tensor shifted = sub(a, detach(max(a, {axis}, true)));
  return sub(shifted, log(sum(exp(shifted), {axis}, true)));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<double> y(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(y), "reshape", {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor select(const Tensor& a, std::size_t index) {
  if (a.dim() < 1 || index >= a.shape()[0]) {
    throw InvalidArgumentError("select index " + std::to_string(index) + " out of range for " + to_string(a.shape()));
  }
  Shape out(a.shape().begin() + 1, a.shape().end());
  if (out.empty()) out = {1};
  const std::size_t n = numel(out);
  const std::size_t offset = index * n;
  std::vector<double> y(a.data().begin() + offset, a.data().begin() + offset + n);
  return make_result(std::move(out), std::move(y), "select", {a}, [offset, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[offset + i] += self.grad[i];
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InvalidArgumentError("stack of zero tensors");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgumentError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw InvalidArgumentError("concat axis out of range for " + to_string(first));
  Shape out = first;
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch: " + to_string(first) + " vs " + to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
      }
    }
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
  for (std::size_t d = axis + 1; d < out.size(); ++d) inner *= out[d];

  std::vector<double> y(numel(out));
  std::vector<std::size_t> widths;
  std::size_t row = out[axis] * inner;
  std::size_t col = 0;
  for (const auto& p : parts) {
    std::size_t w = p.shape()[axis] * inner;
    const auto& x = p.data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.begin() + o * w, w, y.begin() + o * row + col);
    widths.push_back(w);
    col += w;
  }
  return make_result(std::move(out), std::move(y), "concat", parts, [outer, row, widths](Node& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = *self.parents[k];
      std::size_t w = widths[k];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < w; ++i) g[o * w + i] += self.grad[o * row + col + i];
        }
      }
      col += w;
    }
  });
}

Tensor detach(const Tensor& a) {
  return Tensor::from(a.shape(), std::vector<double>(a.data().begin(), a.data().end()), false);
}

}  // namespace recokd
