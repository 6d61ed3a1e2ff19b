// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation and segmentation losses.
//
// Feature tensors handed to the per-stage losses are single samples shaped
// [C,D,H,W]; teacher features are always detached inside the losses.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "recokd/masks.hpp"
#include "recokd/rng.hpp"
#include "recokd/tensor.hpp"

namespace recokd::distill {

struct DistillConfig {
  double temperature = 0.5;
  double gamma = 1.0;   // activation-consistency weight
  double lambda = 1.0;  // context-alignment weight
  /// Multiplies the region term of MS-SARD; 1 leaves it unweighted.
  double sard_weight = 1.0;
  std::vector<std::size_t> stages;     // region distillation / mask alignment
  std::vector<std::size_t> ca_stages;  // context alignment
  bool sard_fg = true;
  bool sard_bg = true;
  bool mask_align = true;
  bool msca = true;
  /// Evaluate foreground and background region terms as two separate sums
  /// instead of one collapsed weight grid. Same value up to rounding.
  bool sard_split = false;
  std::size_t gc_ratio = 4;

  bool any_sard_term() const { return sard_fg || sard_bg || mask_align; }
  bool any_term() const { return any_sard_term() || msca; }
  /// Every stage index any enabled term reads, ascending.
  std::vector<std::size_t> active_stages() const;
  void validate(std::size_t num_stages) const;
};

/// 1x1x1 projection from student to teacher channels. Absent (identity) when
/// the channel counts already agree.
struct AdapterParams {
  Tensor weight;  // [C_teacher, C_student, 1, 1, 1]
  Tensor bias;    // [C_teacher]

  static AdapterParams create(std::size_t student_channels, std::size_t teacher_channels, Rng& rng);
  static AdapterParams identity(std::size_t channels);
  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }
};

/// Applies the adapter to [C',D,H,W] or [N,C',D,H,W] student features.
Tensor apply_adapter(const std::optional<AdapterParams>& adapter, const Tensor& student);

/// Global-context block parameters (key projection, bottleneck transform).
struct GCBlockParams {
  Tensor key_weight;  // [1, C, 1, 1, 1]
  Tensor v1_weight;   // [Cb, C, 1, 1, 1]
  Tensor v1_bias;     // [Cb]
  Tensor norm_gain;   // [Cb]
  Tensor norm_bias;   // [Cb]
  Tensor v2_weight;   // [C, Cb, 1, 1, 1]
  Tensor v2_bias;     // [C]
  std::size_t ratio = 4;

  /// Bottleneck width max(2, C / ratio). The output projection starts at zero
  /// so the block is the identity at initialization.
  static GCBlockParams create(std::size_t channels, std::size_t ratio, Rng& rng, bool zero_output = true);
  std::size_t channels() const { return key_weight.shape()[1]; }
  std::vector<std::pair<std::string, Tensor>> named() const;
};

/// R(F) = F + W_v2 ReLU(GN(W_v1 sum_j softmax_j(W_k F) F_j)) for [C,D,H,W] or
/// [N,C,D,H,W] input; attention is per sample over all voxels.
Tensor gc_block(const Tensor& features, const GCBlockParams& params);

/// Sum over channels and voxels of (F_T - f(F_S))^2.
Tensor loss_feat(const Tensor& teacher, const Tensor& student, const std::optional<AdapterParams>& adapter);

/// gamma * (|V_S^t - V_S^s|_1 + |V_C^t - V_C^s|_1); teacher masks are constants.
Tensor loss_ac(const masks::ActivationMasks& teacher, const masks::ActivationMasks& student, double gamma);

/// Region-, scale- and activation-weighted squared error. `aligned_student`
/// has already been through the adapter.
Tensor loss_sard_aligned(const Tensor& teacher, const Tensor& aligned_student, const masks::MaskBundle& bundle,
                         masks::RegionSelection selection = masks::RegionSelection::all);
Tensor loss_sard(const Tensor& teacher, const Tensor& student, const std::optional<AdapterParams>& adapter,
                 const masks::MaskBundle& bundle, masks::RegionSelection selection = masks::RegionSelection::all);

/// Per-stage teacher/student feature pair for one sample.
struct StageFeatures {
  Tensor teacher;  // [C,D,H,W]
  Tensor student;  // [C',D,H,W], before the adapter
};

struct MsSardTerms {
  Tensor sard;  // sum over stages of region losses under the toggles
  Tensor ac;    // sum over stages of activation-consistency losses
  Tensor total;
};

/// Sum over config.stages of (L_sard + L_ac) with the ablation toggles
/// applied. Lists are indexed by encoder stage; bundles are only read for
/// selected stages.
MsSardTerms loss_ms_sard(const std::vector<StageFeatures>& stages,
                         const std::vector<std::optional<AdapterParams>>& adapters,
                         const std::vector<masks::MaskBundle>& bundles, const DistillConfig& config);

/// lambda * sum over stages of |R(F_T) - R(f(F_S))|_2^2 with one shared block
/// per stage. `stages` selects entries of the per-stage lists.
Tensor loss_ms_ca(const std::vector<StageFeatures>& features, const std::vector<std::optional<AdapterParams>>& adapters,
                  const std::vector<GCBlockParams>& gc_params, double lambda, const std::vector<std::size_t>& stages);

struct TaskLoss {
  Tensor dice;  // 1 - mean foreground soft Dice
  Tensor ce;    // voxel-mean cross-entropy
  Tensor total;
};

constexpr double kDiceSmooth = 1e-5;

/// Soft Dice + cross-entropy for logits [K,D,H,W] (or [N,K,D,H,W] with one
/// label volume per sample; Dice is averaged over samples).
TaskLoss loss_task(const Tensor& logits, const std::vector<const io::LabelVolume*>& labels);
TaskLoss loss_task(const Tensor& logits, const io::LabelVolume& labels);

Tensor loss_total(const Tensor& task, const Tensor& ms_sard, const Tensor& ms_ca);

}  // namespace recokd::distill
