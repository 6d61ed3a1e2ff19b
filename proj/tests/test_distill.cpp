// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "recokd/distill.hpp"
#include "recokd/ops.hpp"
#include "support.hpp"

using namespace recokd;
using namespace recokd::distill;
using io::Dims3;

namespace {

std::optional<AdapterParams> random_adapter(std::size_t cin, std::size_t cout, Rng& rng) {
  auto a = AdapterParams::create(cin, cout, rng);
  for (auto& x : a.bias.mutable_data()) x = rng.uniform(-0.5, 0.5);
  return a;
}

oracle::Feat adapt(const oracle::Feat& s, const std::optional<AdapterParams>& a) {
  if (!a) return s;
  return oracle::project(s, support::values(a->weight), support::values(a->bias), a->out_channels());
}

DistillConfig all_on(std::vector<std::size_t> stages) {
  DistillConfig c;
  c.stages = stages;
  c.ca_stages = stages;
  return c;
}

}  // namespace

TEST(LossFeat, Examples) {
  auto t = Tensor::from({1, 1, 1, 1}, {2.0});
  auto s = Tensor::from({1, 1, 1, 1}, {0.0}, true);
  EXPECT_DOUBLE_EQ(loss_feat(t, s, std::nullopt).item(), 4.0);
  EXPECT_DOUBLE_EQ(loss_feat(t, t, std::nullopt).item(), 0.0);
  EXPECT_THROW(loss_feat(Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 2, 2, 3}), std::nullopt), ShapeError);
}

TEST(LossFeat, LoopOracle) {
  Rng rng(1);
  auto t = oracle::random_feat(2, {2, 2, 2}, rng);
  auto s = oracle::random_feat(2, {2, 2, 2}, rng);
  double ref = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 2; ++k) ref += std::pow(t.at(c, i, j, k) - s.at(c, i, j, k), 2);
  EXPECT_NEAR(loss_feat(support::to_tensor(t), support::to_tensor(s), std::nullopt).item(), ref, 1e-12);
}

TEST(LossAc, Examples) {
  masks::ActivationMasks t, s;
  t.spatial = Tensor::from({1, 1, 2}, {1.5, 0.5});
  s.spatial = Tensor::from({1, 1, 2}, {1.0, 1.0}, true);
  t.channel = Tensor::from({2}, {0.8, 1.2});
  s.channel = Tensor::from({2}, {0.8, 1.2}, true);
  EXPECT_DOUBLE_EQ(loss_ac(t, s, 1.0).item(), 1.0);
  EXPECT_DOUBLE_EQ(loss_ac(t, s, 2.5).item(), 2.5);
  EXPECT_DOUBLE_EQ(loss_ac(t, s, 0.0).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss_ac(t, t, 1.0).item(), 0.0);
}

TEST(LossAc, GradientOnlyReachesStudent) {
  Rng rng(2);
  auto ft = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
  auto fs = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
  auto l = loss_ac(masks::build_activation_masks(ft, 0.5), masks::build_activation_masks(fs, 0.5), 1.0);
  l.backward();
  for (double g : ft.grad()) EXPECT_EQ(g, 0.0);
  double n = 0.0;
  for (double g : fs.grad()) n += std::fabs(g);
  EXPECT_GT(n, 0.0);
}

TEST(LossSard, ZeroAtAgreement) {
  Rng rng(3);
  auto t = support::to_tensor(oracle::random_feat(3, {2, 2, 2}, rng));
  auto lab = support::labels({2, 2, 2}, 3, support::random_ids(8, 3, rng));
  auto b = masks::build_stage_masks(lab, t, 0.5);
  EXPECT_EQ(loss_sard(t, t, std::nullopt, b).item(), 0.0);
}

TEST(LossSard, ConstantTeacherSingleClassByHand) {
  // V terms are all one, one class covering all 8 voxels: (1/8) sum d^2.
  auto t = Tensor::full({1, 2, 2, 2}, 1.0);
  auto s = Tensor::from({1, 2, 2, 2}, {0, 1, 2, 3, 1, 1, 1, 1});
  auto lab = io::LabelVolume::exclusive({2, 2, 2}, 0, std::vector<std::int32_t>(8, 0));
  auto b = masks::build_stage_masks(lab, t, 0.5);
  EXPECT_NEAR(loss_sard(t, s, std::nullopt, b).item(), (1.0 + 0.0 + 1.0 + 4.0) / 8.0, 1e-15);
}

TEST(LossSard, LoopOracleWithAdapter) {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const Dims3 s{4, 4, 4};
    auto t = oracle::random_feat(4, s, rng, 1.5);
    auto st = oracle::random_feat(2, s, rng);
    auto ad = random_adapter(2, 4, rng);
    auto ids = support::random_ids(s.voxels(), 3, rng);
    auto b = masks::build_stage_masks(support::labels(s, 3, ids), support::to_tensor(t), 0.5);
    const double got = loss_sard(support::to_tensor(t), support::to_tensor(st), ad, b).item();
    const double ref = oracle::sard(t, adapt(st, ad), ids, 3, 0.5, {0, 1, 2});
    EXPECT_NEAR(got, ref, 1e-10 * std::max(1.0, ref));
    const double fg = loss_sard(support::to_tensor(t), support::to_tensor(st), ad, b, masks::RegionSelection::foreground).item();
    EXPECT_NEAR(fg, oracle::sard(t, adapt(st, ad), ids, 3, 0.5, {1, 2}), 1e-10 * std::max(1.0, ref));
  }
}

TEST(LossMsSard, TogglesOffIsZero) {
  Rng rng(5);
  auto t = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng));
  auto s = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
  auto lab = support::labels({2, 2, 2}, 2, support::random_ids(8, 2, rng));
  DistillConfig c = all_on({0});
  c.sard_fg = c.sard_bg = c.mask_align = false;
  auto terms = loss_ms_sard({{t, s}}, {std::nullopt}, {masks::build_stage_masks(lab, t, 0.5)}, c);
  EXPECT_EQ(terms.total.item(), 0.0);
}

TEST(LossMsSard, SingleStageReduces) {
  Rng rng(6);
  auto t = support::to_tensor(oracle::random_feat(4, {2, 2, 2}, rng));
  auto s = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
  auto ad = random_adapter(2, 4, rng);
  auto lab = support::labels({2, 2, 2}, 3, support::random_ids(8, 3, rng));
  auto b = masks::build_stage_masks(lab, t, 0.5);
  DistillConfig c = all_on({0});
  c.gamma = 0.7;
  auto terms = loss_ms_sard({{t, s}}, {ad}, {b}, c);
  const double ref = loss_sard(t, s, ad, b).item() +
                     loss_ac(b.activation, masks::build_activation_masks(apply_adapter(ad, s), 0.5), 0.7).item();
  EXPECT_NEAR(terms.total.item(), ref, 1e-12 * std::max(1.0, ref));
}

TEST(LossMsSard, ForegroundPlusBackgroundIsFull) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<StageFeatures> f;
    std::vector<masks::MaskBundle> b;
    for (Dims3 s : {Dims3{4, 4, 4}, Dims3{2, 2, 2}}) {
      auto t = support::to_tensor(oracle::random_feat(3, s, rng));
      f.push_back({t, support::to_tensor(oracle::random_feat(3, s, rng), true)});
      b.push_back(masks::build_stage_masks(support::labels(s, 3, support::random_ids(s.voxels(), 3, rng)), t, 0.5));
    }
    auto run = [&](bool fg, bool bg) {
      DistillConfig c = all_on({0, 1});
      c.mask_align = false;
      c.sard_fg = fg;
      c.sard_bg = bg;
      return loss_ms_sard(f, {std::nullopt, std::nullopt}, b, c).total.item();
    };
    const double full = run(true, true);
    EXPECT_NEAR(run(true, false) + run(false, true), full, 1e-10 * std::max(1.0, full));
  }
}

TEST(LossMsSard, SplitSumsMatchCollapsedGrid) {
  Rng rng(8);
  auto t = support::to_tensor(oracle::random_feat(3, {3, 3, 3}, rng));
  auto s = support::to_tensor(oracle::random_feat(3, {3, 3, 3}, rng), true);
  auto b = masks::build_stage_masks(support::labels({3, 3, 3}, 3, support::random_ids(27, 3, rng)), t, 0.5);
  DistillConfig c = all_on({0});
  const double a = loss_ms_sard({{t, s}}, {std::nullopt}, {b}, c).total.item();
  c.sard_split = true;
  EXPECT_NEAR(loss_ms_sard({{t, s}}, {std::nullopt}, {b}, c).total.item(), a, 1e-10 * std::max(1.0, a));
}

TEST(LossMsSard, EmptyStagesRejected) {
  DistillConfig c;
  c.stages = {};
  EXPECT_THROW(c.validate(3), ValidationError);
  c.stages = {5};
  EXPECT_THROW(c.validate(3), ValidationError);
}

TEST(GcBlock, ZeroOutputIsIdentity) {
  Rng rng(9);
  auto f = support::to_tensor(oracle::random_feat(4, {2, 2, 2}, rng));
  auto p = GCBlockParams::create(4, 4, rng);
  EXPECT_EQ(support::values(gc_block(f, p)), support::values(f));
}

TEST(GcBlock, ConstantInputPoolsTheConstant) {
  Rng rng(10);
  auto p = support::random_gc(4, rng);
  std::vector<double> v(4 * 8);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 8; ++i) v[c * 8 + i] = static_cast<double>(c) - 1.5;
  oracle::Feat f{4, {2, 2, 2}, v};
  // With a spatially constant map every voxel gets the same attention, so
  // the output stays spatially constant.
  auto out = support::values(gc_block(support::to_tensor(f), p));
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 1; i < 8; ++i) EXPECT_NEAR(out[c * 8 + i], out[c * 8], 1e-14);
  auto ref = oracle::gc_block(f, support::to_oracle(p));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref.v[i], 1e-12);
}

TEST(GcBlock, DirectSummationOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    auto f = oracle::random_feat(4, {3, 2, 4}, rng, 2.0);
    auto p = support::random_gc(4, rng);
    auto out = support::values(gc_block(support::to_tensor(f), p));
    auto ref = oracle::gc_block(f, support::to_oracle(p));
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref.v[i], 1e-10);
  }
  EXPECT_THROW(gc_block(Tensor::zeros({3, 2, 2, 2}), GCBlockParams::create(4, 4, rng)), ShapeError);
}

TEST(GcBlock, BatchedEqualsPerSample) {
  Rng rng(12);
  auto p = support::random_gc(4, rng);
  auto a = support::to_tensor(oracle::random_feat(4, {2, 2, 2}, rng));
  auto b = support::to_tensor(oracle::random_feat(4, {2, 2, 2}, rng));
  auto batched = support::values(gc_block(stack({a, b}), p));
  auto pa = support::values(gc_block(a, p));
  auto pb = support::values(gc_block(b, p));
  pa.insert(pa.end(), pb.begin(), pb.end());
  ASSERT_EQ(batched.size(), pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(batched[i], pa[i], 1e-13);
}

TEST(LossMsCa, ZeroCasesAndOracle) {
  Rng rng(13);
  auto p = support::random_gc(4, rng);
  auto t = oracle::random_feat(4, {2, 2, 2}, rng);
  auto s = oracle::random_feat(2, {2, 2, 2}, rng);
  auto ad = random_adapter(2, 4, rng);
  std::vector<StageFeatures> f{{support::to_tensor(t), support::to_tensor(s, true)}};
  EXPECT_EQ(loss_ms_ca(f, {ad}, {p}, 0.0, {0}).item(), 0.0);
  std::vector<StageFeatures> same{{support::to_tensor(t), support::to_tensor(t, true)}};
  EXPECT_EQ(loss_ms_ca(same, {std::nullopt}, {p}, 1.0, {0}).item(), 0.0);
  const auto og = support::to_oracle(p);
  const double ref = 0.6 * oracle::sq_dist(oracle::gc_block(t, og), oracle::gc_block(adapt(s, ad), og));
  EXPECT_NEAR(loss_ms_ca(f, {ad}, {p}, 0.6, {0}).item(), ref, 1e-10 * std::max(1.0, ref));
}

TEST(LossMsCa, TeacherGetsNoGradient) {
  Rng rng(14);
  auto p = support::random_gc(2, rng);
  auto t = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
  auto s = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
  loss_ms_ca({{t, s}}, {std::nullopt}, {p}, 1.0, {0}).backward();
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
  double n = 0.0;
  for (double g : s.grad()) n += std::fabs(g);
  EXPECT_GT(n, 0.0);
}

TEST(LossTask, SaturatedLogitsGiveNearZero) {
  Rng rng(15);
  auto ids = support::random_ids(64, 3, rng);
  ids[0] = 1;
  ids[1] = 2;
  std::vector<double> logits(3 * 64, 0.0);
  for (std::size_t v = 0; v < 64; ++v) logits[static_cast<std::size_t>(ids[v]) * 64 + v] = 20.0;
  auto l = loss_task(Tensor::from({3, 4, 4, 4}, logits), support::labels({4, 4, 4}, 3, ids));
  EXPECT_LT(l.total.item(), 1e-3);
}

TEST(LossTask, UniformLogitsBalancedCe) {
  std::vector<std::int32_t> ids{0, 1, 0, 1, 0, 1, 0, 1};
  auto l = loss_task(Tensor::zeros({2, 2, 2, 2}), io::LabelVolume::exclusive({2, 2, 2}, 1, ids));
  EXPECT_NEAR(l.ce.item(), std::log(2.0), 1e-15);
}

TEST(LossTask, LoopOracle) {
  Rng rng(16);
  for (std::size_t k : {2u, 3u}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto ids = support::random_ids(64, k, rng);
      std::vector<double> logits(k * 64);
      for (auto& x : logits) x = 2.0 * rng.normal();
      auto l = loss_task(Tensor::from({k, 4, 4, 4}, logits), support::labels({4, 4, 4}, k, ids));
      EXPECT_NEAR(l.total.item(), oracle::task(logits, k, ids), 1e-10);
    }
  }
  EXPECT_THROW(loss_task(Tensor::zeros({3, 2, 2, 2}), io::LabelVolume::exclusive({2, 2, 2}, 1, std::vector<std::int32_t>(8, 0))),
               ShapeError);
}

TEST(LossTask, BatchAveragesSamples) {
  Rng rng(17);
  std::vector<double> a(2 * 8), b(2 * 8);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  auto la = support::labels({2, 2, 2}, 2, support::random_ids(8, 2, rng));
  auto lb = support::labels({2, 2, 2}, 2, support::random_ids(8, 2, rng));
  auto ta = Tensor::from({2, 2, 2, 2}, a), tb = Tensor::from({2, 2, 2, 2}, b);
  auto batched = loss_task(stack({ta, tb}), {&la, &lb});
  const double ref = 0.5 * (loss_task(ta, la).total.item() + loss_task(tb, lb).total.item());
  EXPECT_NEAR(batched.total.item(), ref, 1e-13);
}

TEST(LossTotal, PlainSum) {
  EXPECT_DOUBLE_EQ(loss_total(Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(3)).item(), 6.0);
}

TEST(Losses, NonNegativeOnRandomInputs) {
  Rng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng));
    auto s = support::to_tensor(oracle::random_feat(2, {2, 2, 2}, rng), true);
    auto b = masks::build_stage_masks(support::labels({2, 2, 2}, 3, support::random_ids(8, 3, rng)), t, 0.5);
    EXPECT_GE(loss_feat(t, s, std::nullopt).item(), 0.0);
    EXPECT_GE(loss_sard(t, s, std::nullopt, b).item(), 0.0);
    EXPECT_GE(loss_ms_sard({{t, s}}, {std::nullopt}, {b}, all_on({0})).total.item(), 0.0);
    EXPECT_GE(loss_ms_ca({{t, s}}, {std::nullopt}, {support::random_gc(2, rng)}, 1.0, {0}).item(), 0.0);
  }
}

TEST(Adapter, CreateAndApply) {
  Rng rng(19);
  auto a = AdapterParams::create(2, 4, rng);
  EXPECT_EQ(a.weight.shape(), (Shape{4, 2, 1, 1, 1}));
  auto x = oracle::random_feat(2, {2, 2, 2}, rng);
  auto y = support::values(apply_adapter(a, support::to_tensor(x)));
  auto ref = adapt(x, a);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref.v[i], 1e-14);
  EXPECT_EQ(support::values(apply_adapter(std::nullopt, support::to_tensor(x))), x.v);
}

TEST(LossMsSard, SardWeightScalesOnlyTheRegionTerm) {
  Rng rng(20);
  auto t = support::to_tensor(oracle::random_feat(3, {2, 2, 2}, rng));
  auto s = support::to_tensor(oracle::random_feat(3, {2, 2, 2}, rng), true);
  auto b = masks::build_stage_masks(support::labels({2, 2, 2}, 2, support::random_ids(8, 2, rng)), t, 0.5);
  DistillConfig c = all_on({0});
  auto base = loss_ms_sard({{t, s}}, {std::nullopt}, {b}, c);
  c.sard_weight = 0.25;
  auto w = loss_ms_sard({{t, s}}, {std::nullopt}, {b}, c);
  EXPECT_NEAR(w.sard.item(), 0.25 * base.sard.item(), 1e-14);
  EXPECT_EQ(w.ac.item(), base.ac.item());
  c.sard_weight = -1.0;
  EXPECT_THROW(c.validate(1), ValidationError);
}
