// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Volumetric kernels: conv3d, nearest upsampling, group norm.

#include <algorithm>
#include <cmath>

#include "parallel.hpp"
#include "recokd/ops.hpp"

namespace recokd {

using detail::make_result;
using detail::Node;
using detail::parallel_for;

namespace {

struct ConvGeometry {
  std::size_t n, c, d, h, w;     // input
  std::size_t o, kd, kh, kw;     // kernel
  std::size_t od, oh, ow;        // output
  Triple stride, pad;

  // Output columns whose input column ow*s + k - p lies in [0, W).
  std::pair<std::size_t, std::size_t> col_range(std::size_t k) const {
    long s = static_cast<long>(stride[2]), p = static_cast<long>(pad[2]);
    long lo = 0;
    while (lo * s + static_cast<long>(k) - p < 0) ++lo;
    long hi = static_cast<long>(ow);
    while (hi > lo && (hi - 1) * s + static_cast<long>(k) - p >= static_cast<long>(w)) --hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(hi, lo))};
  }
};

std::size_t out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* axis) {
  long num = static_cast<long>(in) + 2 * static_cast<long>(p) - static_cast<long>(k);
  if (s == 0 || num < 0) {
    throw GeometryError(std::string("conv3d output ") + axis + " < 1 (input " + std::to_string(in) + ", kernel " +
                        std::to_string(k) + ", stride " + std::to_string(s) + ", padding " + std::to_string(p) + ")");
  }
  return static_cast<std::size_t>(num) / s + 1;
}

inline double dot(const double* a, const double* b, std::size_t n, std::size_t b_stride) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  if (b_stride == 1) {
    for (; i + 4 <= n; i += 4) {
      s0 += a[i] * b[i];
      s1 += a[i + 1] * b[i + 1];
      s2 += a[i + 2] * b[i + 2];
      s3 += a[i + 3] * b[i + 3];
    }
  }
  for (; i < n; ++i) s0 += a[i] * b[i * b_stride];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, Triple stride, Triple padding) {
  if (x.dim() != 5 || w.dim() != 5) {
    throw ShapeError("conv3d expects x[N,C,D,H,W] and w[O,C,kd,kh,kw], got " + to_string(x.shape()) + " and " +
                     to_string(w.shape()));
  }
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs[1] != ws[1]) {
    throw ShapeError("conv3d channel mismatch: input " + to_string(xs) + " vs weight " + to_string(ws));
  }
  if (bias && (bias->numel() != ws[0])) {
    throw ShapeError("conv3d bias " + to_string(bias->shape()) + " does not match " + std::to_string(ws[0]) +
                     " output channels");
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4], 0, 0, 0, stride, padding};
  g.od = out_dim(g.d, g.kd, stride[0], padding[0], "depth");
  g.oh = out_dim(g.h, g.kh, stride[1], padding[1], "height");
  g.ow = out_dim(g.w, g.kw, stride[2], padding[2], "width");

  const std::size_t in_plane = g.d * g.h * g.w;
  const std::size_t out_plane = g.od * g.oh * g.ow;
  const std::size_t ksize = g.kd * g.kh * g.kw;
  std::vector<double> y(g.n * g.o * out_plane);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  const double* bd = bias ? bias->data().data() : nullptr;

  std::vector<std::pair<std::size_t, std::size_t>> cols(g.kw);
  for (std::size_t k = 0; k < g.kw; ++k) cols[k] = g.col_range(k);

  parallel_for(g.n * g.o, [&](std::size_t begin, std::size_t end) {
    for (std::size_t no = begin; no < end; ++no) {
      const std::size_t n = no / g.o, o = no % g.o;
      double* yp = y.data() + no * out_plane;
      std::fill(yp, yp + out_plane, bd ? bd[o] : 0.0);
      for (std::size_t od = 0; od < g.od; ++od) {
        for (std::size_t oh = 0; oh < g.oh; ++oh) {
          double* yrow = yp + (od * g.oh + oh) * g.ow;
          for (std::size_t c = 0; c < g.c; ++c) {
            const double* xc = xd + (n * g.c + c) * in_plane;
            const double* wc = wd + (o * g.c + c) * ksize;
            for (std::size_t kd = 0; kd < g.kd; ++kd) {
              long id = static_cast<long>(od * stride[0] + kd) - static_cast<long>(padding[0]);
              if (id < 0 || id >= static_cast<long>(g.d)) continue;
              for (std::size_t kh = 0; kh < g.kh; ++kh) {
                long ih = static_cast<long>(oh * stride[1] + kh) - static_cast<long>(padding[1]);
                if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                const double* xrow = xc + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
                const double* wk = wc + (kd * g.kh + kh) * g.kw;
                for (std::size_t kw = 0; kw < g.kw; ++kw) {
                  const double wv = wk[kw];
                  auto [lo, hi] = cols[kw];
                  if (stride[2] == 1) {
                    const double* xr = xrow + static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(padding[2]);
                    for (std::size_t ow = lo; ow < hi; ++ow) yrow[ow] += wv * xr[ow];
                  } else {
                    for (std::size_t ow = lo; ow < hi; ++ow) yrow[ow] += wv * xrow[ow * stride[2] + kw - padding[2]];
                  }
                }
              }
            }
          }
        }
      }
    }
  });

  std::vector<Tensor> parents{x, w};
  if (bias) parents.push_back(*bias);
  return make_result({g.n, g.o, g.od, g.oh, g.ow}, std::move(y), "conv3d", parents, [g, cols](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    const std::size_t in_plane = g.d * g.h * g.w;
    const std::size_t out_plane = g.od * g.oh * g.ow;
    const std::size_t ksize = g.kd * g.kh * g.kw;
    const double* gy = self.grad.data();
    const double* xd = px.data.data();
    const double* wd = pw.data.data();

    if (pb && pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t o = 0; o < g.o; ++o) {
        double s = 0.0;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* gp = gy + (n * g.o + o) * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
        }
        gb[o] += s;
      }
    }

    if (pw.requires_grad) {
      double* gw = pw.ensure_grad().data();
      parallel_for(g.o, [&](std::size_t begin, std::size_t end) {
        std::vector<double> acc(ksize);
        for (std::size_t o = begin; o < end; ++o) {
          for (std::size_t c = 0; c < g.c; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t n = 0; n < g.n; ++n) {
              const double* gp = gy + (n * g.o + o) * out_plane;
              const double* xc = xd + (n * g.c + c) * in_plane;
              for (std::size_t od = 0; od < g.od; ++od) {
                for (std::size_t oh = 0; oh < g.oh; ++oh) {
                  const double* grow = gp + (od * g.oh + oh) * g.ow;
                  for (std::size_t kd = 0; kd < g.kd; ++kd) {
                    long id = static_cast<long>(od * g.stride[0] + kd) - static_cast<long>(g.pad[0]);
                    if (id < 0 || id >= static_cast<long>(g.d)) continue;
                    for (std::size_t kh = 0; kh < g.kh; ++kh) {
                      long ih = static_cast<long>(oh * g.stride[1] + kh) - static_cast<long>(g.pad[1]);
                      if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                      const double* xrow =
                          xc + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
                      double* ak = acc.data() + (kd * g.kh + kh) * g.kw;
                      for (std::size_t kw = 0; kw < g.kw; ++kw) {
                        auto [lo, hi] = cols[kw];
                        if (lo >= hi) continue;
                        ak[kw] += dot(grow + lo, xrow + (lo * g.stride[2] + kw - g.pad[2]), hi - lo, g.stride[2]);
                      }
                    }
                  }
                }
              }
            }
            double* gwc = gw + (o * g.c + c) * ksize;
            for (std::size_t k = 0; k < ksize; ++k) gwc[k] += acc[k];
          }
        }
      });
    }

    if (px.requires_grad) {
      double* gx = px.ensure_grad().data();
      parallel_for(g.n * g.c, [&](std::size_t begin, std::size_t end) {
        for (std::size_t nc = begin; nc < end; ++nc) {
          const std::size_t n = nc / g.c, c = nc % g.c;
          double* gxc = gx + nc * in_plane;
          for (std::size_t o = 0; o < g.o; ++o) {
            const double* gp = gy + (n * g.o + o) * out_plane;
            const double* wc = wd + (o * g.c + c) * ksize;
            for (std::size_t od = 0; od < g.od; ++od) {
              for (std::size_t oh = 0; oh < g.oh; ++oh) {
                const double* grow = gp + (od * g.oh + oh) * g.ow;
                for (std::size_t kd = 0; kd < g.kd; ++kd) {
                  long id = static_cast<long>(od * g.stride[0] + kd) - static_cast<long>(g.pad[0]);
                  if (id < 0 || id >= static_cast<long>(g.d)) continue;
                  for (std::size_t kh = 0; kh < g.kh; ++kh) {
                    long ih = static_cast<long>(oh * g.stride[1] + kh) - static_cast<long>(g.pad[1]);
                    if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                    double* xrow = gxc + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
                    const double* wk = wc + (kd * g.kh + kh) * g.kw;
                    for (std::size_t kw = 0; kw < g.kw; ++kw) {
                      const double wv = wk[kw];
                      auto [lo, hi] = cols[kw];
                      if (g.stride[2] == 1) {
                        double* xr = xrow + static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad[2]);
                        for (std::size_t ow = lo; ow < hi; ++ow) xr[ow] += wv * grow[ow];
                      } else {
                        for (std::size_t ow = lo; ow < hi; ++ow) xrow[ow * g.stride[2] + kw - g.pad[2]] += wv * grow[ow];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
    }
  });
}

Tensor upsample_nearest(const Tensor& x, Triple factor) {
  if (x.dim() != 5) throw ShapeError("upsample expects x[N,C,D,H,W], got " + to_string(x.shape()));
  for (auto f : factor) {
    if (f < 1) throw GeometryError("upsample factor components must be >= 1");
  }
  const auto& s = x.shape();
  Shape out{s[0], s[1], s[2] * factor[0], s[3] * factor[1], s[4] * factor[2]};
  const std::size_t planes = s[0] * s[1];
  const std::size_t in_plane = s[2] * s[3] * s[4];
  const std::size_t out_plane = out[2] * out[3] * out[4];
  // Source index of every output voxel within its plane.
  std::vector<std::size_t> src(out_plane);
  for (std::size_t d = 0; d < out[2]; ++d)
    for (std::size_t h = 0; h < out[3]; ++h)
      for (std::size_t w = 0; w < out[4]; ++w)
        src[(d * out[3] + h) * out[4] + w] = ((d / factor[0]) * s[3] + h / factor[1]) * s[4] + w / factor[2];

  std::vector<double> y(planes * out_plane);
  const auto& xd = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_plane; ++i) y[p * out_plane + i] = xd[p * in_plane + src[i]];

  return make_result(out, std::move(y), "upsample", {x}, [planes, in_plane, out_plane, src = std::move(src)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < out_plane; ++i) g[p * in_plane + src[i]] += self.grad[p * out_plane + i];
  });
}

Tensor upsample_conv3d(const Tensor& x, Triple factor, const Tensor& w, const std::optional<Tensor>& bias) {
  if (w.dim() != 5) throw ShapeError("upsample_conv3d weight must be 5-D, got " + to_string(w.shape()));
  const auto& ws = w.shape();
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0 || ws[4] % 2 == 0) {
    throw GeometryError("upsample_conv3d needs an odd kernel, got " + to_string(ws));
  }
  return conv3d(upsample_nearest(x, factor), w, bias, {1, 1, 1}, {ws[2] / 2, ws[3] / 2, ws[4] / 2});
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.dim() < 2) throw ShapeError("group_norm expects x[N,C,...], got " + to_string(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (groups == 0 || c % groups != 0) {
    throw InvalidArgumentError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                               std::to_string(groups) + " groups");
  }
  if (!(eps > 0.0)) throw InvalidArgumentError("group_norm eps must be positive");
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("group_norm affine parameters must have " + std::to_string(c) + " elements");
  }
  const std::size_t spatial = x.numel() / (n * c);
  const std::size_t cpg = c / groups;
  const std::size_t group_size = cpg * spatial;
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();

  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(n * groups);
  std::vector<double> y(x.numel());
  for (std::size_t ng = 0; ng < n * groups; ++ng) {
    const std::size_t base = ng * group_size;
    double mu = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) mu += xd[base + i];
    mu /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
    var /= static_cast<double>(group_size);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[ng] = inv;
    const std::size_t c0 = (ng % groups) * cpg;
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t ch = c0 + i / spatial;
      xhat[base + i] = (xd[base + i] - mu) * inv;
      y[base + i] = xhat[base + i] * gd[ch] + bd[ch];
    }
  }

  return make_result(x.shape(), std::move(y), "group_norm", {x, gain, bias},
                     [n, groups, spatial, cpg, group_size, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const auto& gy = self.grad;
                       const auto& gd = pg.data;
                       std::vector<double>* ggain = pg.requires_grad ? &pg.ensure_grad() : nullptr;
                       std::vector<double>* gbias = pb.requires_grad ? &pb.ensure_grad() : nullptr;
                       std::vector<double>* gx = px.requires_grad ? &px.ensure_grad() : nullptr;
                       for (std::size_t ng = 0; ng < n * groups; ++ng) {
                         const std::size_t base = ng * group_size;
                         const std::size_t c0 = (ng % groups) * cpg;
                         double mean_d = 0.0, mean_dx = 0.0;
                         for (std::size_t i = 0; i < group_size; ++i) {
                           const std::size_t ch = c0 + i / spatial;
                           const double g = gy[base + i];
                           if (ggain) (*ggain)[ch] += g * xhat[base + i];
                           if (gbias) (*gbias)[ch] += g;
                           const double d = g * gd[ch];
                           mean_d += d;
                           mean_dx += d * xhat[base + i];
                         }
                         if (!gx) continue;
                         mean_d /= static_cast<double>(group_size);
                         mean_dx /= static_cast<double>(group_size);
                         const double inv = inv_std[ng];
                         for (std::size_t i = 0; i < group_size; ++i) {
                           const std::size_t ch = c0 + i / spatial;
                           const double d = gy[base + i] * gd[ch];
                           (*gx)[base + i] += inv * (d - mean_d - xhat[base + i] * mean_dx);
                         }
                       }
                     });
}

}  // namespace recokd
