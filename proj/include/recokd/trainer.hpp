// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Teacher pretraining, student distillation, evaluation and ablation runs.
//
// Optimizer: SGD with Nesterov momentum in the usual deep-learning form
//   g = grad + wd * p;  buf = mu * buf + g (buf = g on the first step);
//   p -= lr * (g + mu * buf)
// with lr = lr0 * (1 - step / total_steps)^poly_exponent. Gradients are first
// rescaled by min(1, grad_clip / (||grad||_2 + 1e-6)) over all parameters.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "recokd/distill.hpp"
#include "recokd/network.hpp"
#include "recokd/volumes.hpp"

namespace recokd::train {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 2;
  double lr0 = 0.01;
  double momentum = 0.99;
  double weight_decay = 3e-5;
  double poly_exponent = 0.9;
  /// Global L2 gradient-norm clip applied before the update (0 disables).
  double grad_clip = 12.0;
  std::uint64_t seed = 0;
  /// Training is on whole volumes; when set, must equal the case shape.
  std::optional<io::Dims3> patch_size;
  /// Write a checkpoint every this many epochs (0: only best and final).
  std::size_t checkpoint_every = 0;
  /// Fraction of cases held out for best-checkpoint selection.
  double val_fraction = 0.2;

  void validate(const models::NetworkPlan& plan, io::Dims3 case_shape) const;
  bool operator==(const TrainConfig&) const = default;
};

struct Case {
  std::string id;
  io::ImageVolume image;
  io::LabelVolume labels;  // exclusive mode
};

using Dataset = std::vector<Case>;

struct StepLog {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss_task = 0.0;
  double loss_ms_sard = 0.0;
  double loss_ms_ca = 0.0;
  double loss_total = 0.0;
};

/// `step,lr,loss_task,loss_ms_sard,loss_ms_ca,loss_total` with round-trip
/// precision.
std::string step_log_csv(const std::vector<StepLog>& log);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle, then the first round(val_fraction * n) indices go to
/// validation (at least one case is always kept for training).
Split split_dataset(std::size_t n, double val_fraction, std::uint64_t seed);

struct TrainHooks {
  /// Periodic/best/final checkpoints go here when non-empty.
  std::filesystem::path checkpoint_dir;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  models::NetworkState net;  // infer mode; best-validation weights
  std::vector<StepLog> log;
  Split split;
  /// Epoch whose weights were kept (1-based), and its validation mDice.
  std::size_t best_epoch = 0;
  double best_val_mdice = 0.0;
  std::array<std::uint64_t, 4> rng_state{};
  std::uint64_t steps = 0;
};

/// Supervised training on loss_task. Used for teachers (plan t = 0) and for
/// never-distilled students.
TrainResult train_plain(const Dataset& data, const models::NetworkPlan& plan, const TrainConfig& config,
                        const TrainHooks& hooks = {});

/// Requires plan.width_factor == 0.
TrainResult train_teacher(const Dataset& data, const models::NetworkPlan& plan, const TrainConfig& config,
                          const TrainHooks& hooks = {});

/// Training-only modules attached to a student during distillation.
struct DistillHeads {
  std::vector<std::optional<distill::AdapterParams>> adapters;  // per encoder stage
  std::vector<distill::GCBlockParams> gc;                       // per encoder stage (empty where unused)

  std::vector<Tensor> tensors() const;
};

/// Adapters where channel counts differ on stages any term reads, GC blocks on
/// ca_stages; drawn from Rng(seed, 3).
DistillHeads make_heads(const models::NetworkPlan& teacher, const models::NetworkPlan& student,
                        const distill::DistillConfig& config, std::uint64_t seed);

/// Optimizes student + heads on task + MS-SARD + MS-CA. The teacher is only
/// read. The returned network holds the student parameters alone.
TrainResult distill_student(const Dataset& data, const models::NetworkState& teacher,
                            const models::NetworkPlan& student_plan, const distill::DistillConfig& dconfig,
                            const TrainConfig& config, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------

struct CaseMetrics {
  std::string id;
  std::vector<double> dice;  // per foreground class 1..R; NaN if undefined
  std::vector<double> hd95;  // voxel units; NaN if undefined
  double seconds = 0.0;      // inference wall-clock
};

struct EvalReport {
  std::size_t num_classes = 0;  // foreground classes R
  std::vector<CaseMetrics> cases;
  std::vector<double> class_dice;  // mean over cases with a defined value
  std::vector<double> class_hd95;
  /// Mean of class_dice over classes with a defined value.
  double mdice = 0.0;
};

/// Argmax prediction per case.
std::vector<std::int32_t> predict(const models::NetworkState& net, const io::ImageVolume& image);
EvalReport evaluate(const models::NetworkState& net, const Dataset& data);

/// Per-class metrics of an exclusive prediction against exclusive truth.
CaseMetrics score_case(const std::vector<std::int32_t>& pred, const io::LabelVolume& truth);

/// Deterministic report; wall-clock goes to the separate timing outputs.
std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
std::string timing_json(const EvalReport& report);

// ---------------------------------------------------------------------------

struct AblationEntry {
  std::string name;
  distill::DistillConfig config;
};

struct AblationRow {
  std::string name;
  std::string config_hash;
  double mdice = 0.0;
  std::vector<double> class_dice;
  double delta_mdice = 0.0;  // vs the no-KD baseline
  double seconds = 0.0;
};

struct AblationResult {
  AblationRow baseline;
  std::vector<AblationRow> rows;
};

/// Trains a no-KD student, then one distilled student per entry, all from
/// the same seed, and evaluates each on `eval_data`.
AblationResult run_ablation(const Dataset& data, const Dataset& eval_data, const models::NetworkState& teacher,
                            const models::NetworkPlan& student_plan, const std::vector<AblationEntry>& matrix,
                            const TrainConfig& config);

/// `name,config_hash,mdice,dice_1..dice_R,delta_mdice`; baseline first.
std::string ablation_csv(const AblationResult& result);
std::string ablation_timing_csv(const AblationResult& result);

/// Short stable hash of a distillation config.
std::string config_hash(const distill::DistillConfig& config);

}  // namespace recokd::train
