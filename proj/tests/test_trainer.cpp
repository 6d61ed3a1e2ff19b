// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "recokd/config.hpp"
#include "recokd/metrics.hpp"
#include "recokd/ops.hpp"
#include "recokd/trainer.hpp"
#include "support.hpp"

using namespace recokd;

namespace {

train::Dataset tiny_data(std::size_t n, std::uint64_t seed = 0) {
  config::DataConfig d;
  d.seed = seed;
  d.num_cases = n;
  d.shape = {16, 16, 16};
  d.classes = {{0.1, io::ShapeKind::ellipsoid}, {0.02, io::ShapeKind::sphere}};
  return config::generate_dataset(d);
}

models::NetworkPlan tiny_plan() {
  models::NetworkPlan p;
  p.stage_channels = {4, 8};
  p.strides = {1, 2};
  p.num_classes = 3;
  return p;
}

train::TrainConfig tiny_train() {
  train::TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  return c;
}

distill::DistillConfig all_off() {
  distill::DistillConfig c;
  c.stages = {0, 1};
  c.ca_stages = {0, 1};
  c.sard_fg = c.sard_bg = c.mask_align = c.msca = false;
  return c;
}

distill::DistillConfig full() {
  distill::DistillConfig c;
  c.stages = {0, 1};
  c.ca_stages = {0, 1};
  return c;
}

double task_loss(const models::NetworkState& net, const train::Case& c) {
  auto x = models::make_batch({&c.image});
  auto logits = recokd::select(models::forward_with_taps(net, x).logits, 0);
  return distill::loss_task(logits, c.labels).total.item();
}

}  // namespace

TEST(Split, DeterministicEightyTwenty) {
  auto a = train::split_dataset(10, 0.2, 3);
  auto b = train::split_dataset(10, 0.2, 3);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.val.size(), 2u);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(train::split_dataset(1, 0.2, 0).train.size(), 1u);
}

TEST(Train, OneEpochDecreasesLoss) {
  auto data = tiny_data(1);
  auto plan = tiny_plan();
  auto cfg = tiny_train();
  cfg.epochs = 1;
  cfg.momentum = 0.0;
  cfg.lr0 = 0.05;
  const double before = task_loss(models::build_network(plan), data[0]);
  auto r = train::train_teacher(data, plan, cfg);
  EXPECT_LT(task_loss(r.net, data[0]), before);
  EXPECT_EQ(r.steps, 1u);
}

TEST(Train, SameSeedSameHash) {
  auto data = tiny_data(3);
  auto a = train::train_plain(data, tiny_plan(), tiny_train());
  auto b = train::train_plain(data, tiny_plan(), tiny_train());
  EXPECT_EQ(a.net.hash(), b.net.hash());
  EXPECT_EQ(train::step_log_csv(a.log), train::step_log_csv(b.log));
}

TEST(Train, ZeroLearningRateIsNullUpdate) {
  auto data = tiny_data(3);
  auto cfg = tiny_train();
  cfg.lr0 = 0.0;
  cfg.weight_decay = 0.0;
  auto r = train::train_plain(data, tiny_plan(), cfg);
  EXPECT_EQ(r.net.hash(), models::build_network(tiny_plan()).hash());
}

TEST(Train, RejectsBadConfig) {
  auto cfg = tiny_train();
  cfg.patch_size = io::Dims3{8, 8, 8};
  EXPECT_THROW(train::train_plain(tiny_data(2), tiny_plan(), cfg), ValidationError);
  auto t = tiny_plan();
  t.width_factor = 1;
  EXPECT_THROW(train::train_teacher(tiny_data(2), t, tiny_train()), ValidationError);
}

TEST(Train, DivergenceIsReported) {
  auto cfg = tiny_train();
  cfg.lr0 = 1e200;
  cfg.epochs = 6;
  cfg.grad_clip = 0.0;
  EXPECT_THROW(train::train_plain(tiny_data(3), tiny_plan(), cfg), DivergenceError);
}

TEST(Distill, TogglesOffMatchesPlainTraining) {
  auto data = tiny_data(3);
  auto teacher = train::train_teacher(data, tiny_plan(), tiny_train()).net;
  auto sp = models::derive_student_plan(tiny_plan(), 1, 2);
  auto plain = train::train_plain(data, sp, tiny_train());
  auto kd = train::distill_student(data, teacher, sp, all_off(), tiny_train());
  EXPECT_EQ(plain.net.hash(), kd.net.hash());
  EXPECT_EQ(train::step_log_csv(plain.log), train::step_log_csv(kd.log));
}

TEST(Distill, TeacherUnchangedAndExportMatchesPlainStudent) {
  auto data = tiny_data(3);
  auto teacher = train::train_teacher(data, tiny_plan(), tiny_train()).net;
  const std::string before = teacher.hash();
  auto sp = models::derive_student_plan(tiny_plan(), 1, 2);
  auto kd = train::distill_student(data, teacher, sp, full(), tiny_train());
  EXPECT_EQ(teacher.hash(), before);
  for (const auto& p : teacher.params) {
    EXPECT_FALSE(p.value.has_grad() && std::any_of(p.value.grad().begin(), p.value.grad().end(),
                                                    [](double g) { return g != 0.0; }))
        << p.name;
  }
  auto plain = models::build_network(sp);
  EXPECT_EQ(kd.net.signature(), plain.signature());

  auto dir = support::temp_dir("export");
  models::save_checkpoint({kd.net}, dir);
  auto loaded = models::load_checkpoint(dir).state;
  auto x = models::make_batch({&data[0].image});
  EXPECT_EQ(support::values(models::forward_with_taps(loaded, x).logits),
            support::values(models::forward_with_taps(kd.net, x).logits));
  EXPECT_EQ(loaded.signature(), plain.signature());
}

TEST(Distill, DeterministicAndLogsTerms) {
  auto data = tiny_data(3);
  auto teacher = train::train_teacher(data, tiny_plan(), tiny_train()).net;
  auto sp = models::derive_student_plan(tiny_plan(), 1, 2);
  auto a = train::distill_student(data, teacher, sp, full(), tiny_train());
  auto b = train::distill_student(data, teacher, sp, full(), tiny_train());
  EXPECT_EQ(a.net.hash(), b.net.hash());
  ASSERT_FALSE(a.log.empty());
  EXPECT_GT(a.log.front().loss_ms_sard, 0.0);
  EXPECT_GT(a.log.front().loss_ms_ca, 0.0);
  EXPECT_NEAR(a.log.front().loss_total,
              a.log.front().loss_task + a.log.front().loss_ms_sard + a.log.front().loss_ms_ca,
              1e-9 * a.log.front().loss_total);
}

TEST(Distill, TeacherMustMatchTopology) {
  auto data = tiny_data(2);
  auto teacher = models::build_network(tiny_plan());
  auto other = tiny_plan();
  other.strides = {1, 1};
  EXPECT_THROW(train::distill_student(data, teacher, models::derive_student_plan(other, 1, 2), full(), tiny_train()),
               Error);
}

TEST(Evaluate, PerfectAndDisjoint) {
  std::vector<std::int32_t> ids(512, 0);
  for (std::size_t v = 0; v < 20; ++v) ids[v] = 1;
  auto truth = io::LabelVolume::exclusive({8, 8, 8}, 2, ids);
  auto m = train::score_case(ids, truth);
  EXPECT_EQ(m.dice[0], 1.0);
  EXPECT_EQ(m.hd95[0], 0.0);
  EXPECT_TRUE(std::isnan(m.dice[1]));
  EXPECT_TRUE(std::isnan(m.hd95[1]));
  std::vector<std::int32_t> other(512, 0);
  for (std::size_t v = 100; v < 120; ++v) other[v] = 1;
  EXPECT_EQ(train::score_case(other, truth).dice[0], 0.0);
}

TEST(Evaluate, ReportsAreDeterministic) {
  auto data = tiny_data(2);
  auto net = models::build_network(tiny_plan());
  auto a = train::evaluate(net, data), b = train::evaluate(net, data);
  EXPECT_EQ(train::report_json(a), train::report_json(b));
  EXPECT_EQ(train::report_csv(a), train::report_csv(b));
  EXPECT_GE(a.mdice, 0.0);
  EXPECT_LE(a.mdice, 1.0);
  auto j = nlohmann::json::parse(train::report_json(a));
  EXPECT_TRUE(j.contains("cases"));
}

TEST(Ablation, AllOffRowHasZeroDelta) {
  auto data = tiny_data(3);
  auto teacher = train::train_teacher(data, tiny_plan(), tiny_train()).net;
  auto sp = models::derive_student_plan(tiny_plan(), 1, 2);
  auto split = full();
  split.sard_split = true;
  auto r = train::run_ablation(data, tiny_data(2, 99), teacher, sp,
                               {{"off", all_off()}, {"full", full()}, {"fg+bg", split}}, tiny_train());
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].delta_mdice, 0.0);
  EXPECT_NEAR(r.rows[1].mdice, r.rows[2].mdice, 1e-9);
  EXPECT_NE(r.rows[0].config_hash, r.rows[1].config_hash);
  auto csv = train::ablation_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,config_hash,mdice,dice_1,dice_2,delta_mdice");
}
