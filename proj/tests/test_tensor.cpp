// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "recokd/ops.hpp"
#include "recokd/rng.hpp"
#include "recokd/tensor.hpp"
#include "support.hpp"

using namespace recokd;

namespace {

std::vector<double> vec(const Tensor& t) { return support::values(t); }

// Central differences of a scalar function of one leaf, compared against
// the analytic gradient element by element.
void expect_grad_matches(Tensor x, const std::function<Tensor(const Tensor&)>& f, double tol = 1e-7) {
  x.zero_grad();
  f(x).backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = x.data()[i];
    x.mutable_data()[i] = keep + h;
    const double up = f(x).item();
    x.mutable_data()[i] = keep - h;
    const double down = f(x).item();
    x.mutable_data()[i] = keep;
    const double numeric = (up - down) / (2 * h);
    EXPECT_NEAR(analytic[i], numeric, tol * std::max(1.0, std::fabs(numeric))) << "element " << i;
  }
}

Tensor random_leaf(Shape s, Rng& rng) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(s), std::move(v), true);
}

}  // namespace

TEST(Elementwise, Definitions) {
  EXPECT_EQ(vec(abs(Tensor::from({3}, {-1, 2, 0}))), (std::vector<double>{1, 2, 0}));
  EXPECT_EQ(vec(add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}))), (std::vector<double>{4, 6}));
}

TEST(Elementwise, BroadcastTrailingAxes) {
  auto r = add(Tensor::from({2, 3}, {0, 0, 0, 1, 1, 1}), Tensor::from({3}, {1, 2, 3}));
  EXPECT_EQ(r.shape(), (Shape{2, 3}));
  EXPECT_EQ(vec(r), (std::vector<double>{1, 2, 3, 2, 3, 4}));
  EXPECT_EQ(broadcast_shape({4, 1, 3}, {5, 1}), (Shape{4, 5, 3}));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({4}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, DivisionByNearZeroIsDegenerate) {
  EXPECT_THROW(div(Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 1e-13})), DegenerateInputError);
}

TEST(Elementwise, SquareGradient) {
  auto x = Tensor::from({1}, {3.0}, true);
  sum_all(square(x)).backward();
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);
  expect_grad_matches(x, [](const Tensor& t) { return sum_all(square(t)); }, 1e-8);
}

TEST(Reduce, Examples) {
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vec(sum(x, {1})), (std::vector<double>{3, 7}));
  auto c = Tensor::full({2, 3, 4}, 2.5);
  EXPECT_DOUBLE_EQ(mean(c, {0, 2}).data()[1], 2.5);
  EXPECT_DOUBLE_EQ(mean_all(c).item(), 2.5);
  EXPECT_THROW(sum(x, {2}), InvalidArgumentError);
}

TEST(Reduce, SumGradientIsOnes) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  sum_all(x).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));
  auto y = Tensor::from({2}, {1, 2}, true);
  sum_all(mul(y, y)).backward();
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Reduce, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  auto x = random_leaf({2, 3, 4}, rng);
  expect_grad_matches(x, [](const Tensor& t) { return sum_all(square(mean(t, {0, 2}))); });
  expect_grad_matches(x, [](const Tensor& t) { return sum_all(max(t, {1})); });
}

TEST(Softmax, ConstantInputIsUniform) {
  auto s = softmax_temperature(Tensor::full({2, 2, 2}, 7.0), {0, 1, 2}, 0.5);
  for (double v : s.data()) EXPECT_NEAR(v, 0.125, 1e-15);
}

TEST(Softmax, HighTemperatureFlattens) {
  auto s = softmax_temperature(Tensor::from({2}, {1, 2}), {0}, 1000.0);
  EXPECT_NEAR(s.data()[0], 0.5, 1e-3);
  EXPECT_NEAR(s.data()[1], 0.5, 1e-3);
  EXPECT_THROW(softmax_temperature(Tensor::from({2}, {1, 2}), {0}, 0.0), InvalidArgumentError);
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto x = random_leaf({2, 5}, rng);
  auto w = Tensor::from({2, 5}, {1, -2, 3, 0.5, 2, -1, 0.3, 0.7, 2, -3});
  expect_grad_matches(x, [&](const Tensor& t) { return sum_all(mul(softmax_temperature(t, {1}, 0.5), w)); });
  expect_grad_matches(x, [&](const Tensor& t) { return sum_all(mul(log_softmax(t, 0), w)); });
}

TEST(Conv3d, IdentityKernel) {
  Rng rng(5);
  auto x = random_leaf({1, 2, 3, 3, 3}, rng);
  auto w = Tensor::from({2, 2, 1, 1, 1}, {1, 0, 0, 1});
  auto y = conv3d(x, w, Tensor::zeros({2}));
  EXPECT_EQ(vec(y), vec(x));
}

TEST(Conv3d, OnesKernelCounts) {
  auto y = conv3d(Tensor::full({1, 1, 5, 5, 5}, 1.0), Tensor::full({1, 1, 3, 3, 3}, 1.0), std::nullopt);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3, 3}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 27.0);
  EXPECT_THROW(conv3d(Tensor::zeros({1, 1, 2, 2, 2}), Tensor::zeros({1, 1, 3, 3, 3}), std::nullopt), GeometryError);
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  auto x = random_leaf({2, 2, 4, 3, 5}, rng);
  auto w = random_leaf({3, 2, 3, 3, 3}, rng);
  auto b = random_leaf({3}, rng);
  auto f = [&](const Tensor&) { return sum_all(square(conv3d(x, w, b, {2, 1, 2}, {1, 1, 1}))); };
  expect_grad_matches(x, f);
  expect_grad_matches(w, f);
  expect_grad_matches(b, f);
}

TEST(Upsample, ShapeAndGradient) {
  Rng rng(7);
  auto x = random_leaf({1, 1, 2, 2, 2}, rng);
  EXPECT_EQ(upsample_nearest(x, {2, 2, 2}).shape(), (Shape{1, 1, 4, 4, 4}));
  auto w = random_leaf({2, 1, 3, 3, 3}, rng);
  auto f = [&](const Tensor&) { return sum_all(square(upsample_conv3d(x, {2, 1, 2}, w, std::nullopt))); };
  expect_grad_matches(x, f);
  expect_grad_matches(w, f);
}

TEST(GroupNorm, ConstantInputNormalizesToZero) {
  auto y = group_norm(Tensor::full({1, 4, 2, 2, 2}, 3.0), 2, Tensor::full({4}, 1.0), Tensor::zeros({4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(group_norm(Tensor::zeros({1, 4, 2}), 3, Tensor::full({4}, 1.0), Tensor::zeros({4})),
               InvalidArgumentError);
}

TEST(GroupNorm, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  auto x = random_leaf({2, 4, 2, 2, 3}, rng);
  auto g = random_leaf({4}, rng);
  auto b = random_leaf({4}, rng);
  auto w = random_leaf({2, 4, 2, 2, 3}, rng);
  auto f = [&](const Tensor&) { return sum_all(mul(group_norm(x, 2, g, b), w)); };
  expect_grad_matches(x, f);
  expect_grad_matches(g, f);
  expect_grad_matches(b, f);
}

TEST(Autodiff, DetachedLossLeavesNoGradient) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto loss = sum_all(square(detach(x)));
  loss.backward();
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, NonScalarBackwardThrows) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(square(x).backward(), ShapeError);
}

TEST(Autodiff, ReusedNodeAccumulates) {
  auto x = Tensor::from({1}, {2.0}, true);
  auto y = square(x);
  sum_all(add(y, mul(y, x))).backward();  // x^2 + x^3
  EXPECT_NEAR(x.grad()[0], 2 * 2.0 + 3 * 4.0, 1e-12);
}

TEST(Autodiff, Deterministic) {
  auto run = [] {
    Rng rng(9);
    auto x = random_leaf({1, 2, 4, 4, 4}, rng);
    auto w = random_leaf({3, 2, 3, 3, 3}, rng);
    auto loss = sum_all(square(relu(conv3d(x, w, std::nullopt, {1, 1, 1}, {1, 1, 1}))));
    loss.backward();
    auto out = vec(loss);
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(KinkRecorder, RecordsReluBranches) {
  auto x = Tensor::from({3}, {-1, 0.5, 2});
  KinkRecorder rec;
  relu(x);
  EXPECT_EQ(rec.pattern().size(), 3u);
  EXPECT_EQ(rec.pattern()[0], 0);
  EXPECT_EQ(rec.pattern()[2], 1);
}
