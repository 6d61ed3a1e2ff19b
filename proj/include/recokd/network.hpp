// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// U-shaped 3D segmentation network with uniform width scaling.
//
// Layout for L encoder stages with channels C_0..C_{L-1}:
//   stage 0      convs_per_stage blocks, in_channels -> C_0
//   stage i > 0  strided 3x3x3 conv + GN + ReLU (C_{i-1} -> C_i), then blocks
//   decoder      for i = L-2..0: nearest upsample + 3x3x3 conv + GN + ReLU
//                (C_{i+1} -> C_i), concat skip i, 3x3x3 conv + GN + ReLU
//                (2 C_i -> C_i)
//   head         1x1x1 conv C_0 -> num_classes
// A plain block is conv + GN + ReLU. A residual block is
// ReLU(GN(conv(ReLU(GN(conv(x))))) + shortcut(x)) where the shortcut is a
// 1x1x1 projection when the channel count changes.
// Group norm uses gcd(C, 4) groups.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "recokd/tensor.hpp"
#include "recokd/volumes.hpp"

namespace recokd::models {

struct NetworkPlan {
  /// Channels per encoder stage, already width-scaled.
  std::vector<std::size_t> stage_channels{8, 16};
  /// Width exponent t this plan was derived with (0 for a base plan).
  std::size_t width_factor = 0;
  std::size_t c_min = 4;
  bool residual_encoder = false;
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::size_t convs_per_stage = 1;
  /// Downsampling stride per stage; strides[0] must be 1.
  std::vector<std::size_t> strides{1, 2};
  /// Parameter init seed.
  std::uint64_t init_seed = 0;

  std::size_t num_stages() const { return stage_channels.size(); }
  /// Product of the strides: input dims must be divisible by it.
  std::size_t total_stride() const;
  /// Throws ValidationError with a `plan.*` field path.
  void validate() const;
  bool operator==(const NetworkPlan&) const = default;
  /// True when the plans differ at most in channel widths and width_factor.
  bool same_topology(const NetworkPlan& other) const;
};

void to_json(nlohmann::json& j, const NetworkPlan& plan);
/// Strict: unknown keys and wrong types raise ValidationError.
void from_json(const nlohmann::json& j, NetworkPlan& plan);

/// C' = max(c_min, floor(2^-t C)) per stage; everything else copied.
NetworkPlan derive_student_plan(const NetworkPlan& teacher, std::size_t t, std::size_t c_min = 4);

/// Group count used for a C-channel group norm.
std::size_t norm_groups(std::size_t channels);

enum class Mode { train, infer };

struct NamedParam {
  std::string name;
  Tensor value;
};

struct NetworkState {
  NetworkPlan plan;
  Mode mode = Mode::infer;
  std::vector<NamedParam> params;

  const Tensor& param(const std::string& name) const;
  std::vector<Tensor> tensors() const;
  std::size_t num_parameters() const;
  /// Names and shapes in order; the inference-graph signature.
  std::vector<std::pair<std::string, Shape>> signature() const;
  /// SHA-256 of all parameter values as little-endian float64, in order.
  std::string hash() const;
  /// Deep copy with fresh leaf tensors.
  NetworkState clone() const;
  /// Train mode marks parameters as requiring grad; infer mode clears it.
  void set_mode(Mode m);
};

/// Parameters initialized from Rng(plan.init_seed, 1): conv weights uniform in
/// +-sqrt(6 / fan_in), conv biases 0, GN gain 1 and bias 0.
NetworkState build_network(const NetworkPlan& plan);

struct ForwardResult {
  Tensor logits;                      // [N, K, D, H, W]; undefined if encoder_only
  std::vector<Tensor> stage_features;  // one per encoder stage, [N, C_i, ...]
};

/// `x` is [N, in_channels, D, H, W]; spatial dims must be divisible by the
/// total stride.
ForwardResult forward_with_taps(const NetworkState& net, const Tensor& x, bool encoder_only = false);

/// Stacks image volumes into an [N, M, D, H, W] tensor.
Tensor make_batch(const std::vector<const io::ImageVolume*>& images);

struct Complexity {
  std::uint64_t params = 0;
  /// 2 x multiply-adds for convs plus one per element for GN, ReLU and adds,
  /// for a single sample.
  std::uint64_t flops = 0;
};

/// Analytic counts; `input` is the spatial shape of one sample.
Complexity count_params_flops(const NetworkPlan& plan, io::Dims3 input);

struct Checkpoint {
  NetworkState state;
  std::array<std::uint64_t, 4> rng_state{};
  std::uint64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes `<dir>/manifest.json` and `<dir>/params.bin`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Verifies shapes against the plan and the blob hash.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace recokd::models
