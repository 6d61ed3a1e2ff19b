// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: strict JSON parsing with dotted field paths in every
// error, the published schema, and dotted-path overrides.

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "recokd/distill.hpp"
#include "recokd/network.hpp"
#include "recokd/trainer.hpp"
#include "recokd/volumes.hpp"

namespace recokd::config {

using nlohmann::json;

/// A generated phantom dataset.
struct DataConfig {
  std::uint64_t seed = 0;
  std::size_t num_cases = 10;
  io::Dims3 shape{32, 32, 32};
  double noise_sigma = 0.1;
  std::size_t modalities = 1;
  std::vector<io::ClassSpec> classes{{0.05, io::ShapeKind::ellipsoid}, {0.005, io::ShapeKind::sphere}};

  bool operator==(const DataConfig&) const = default;
};

struct GradcheckConfig {
  std::uint64_t seed = 0;
  std::size_t channels = 4;
  std::size_t size = 4;   // cubic toy volume edge
  std::size_t classes = 3;  // including background
  std::size_t coords_per_loss = 40;
  double step = 1e-5;
  double tolerance = 1e-4;

  bool operator==(const GradcheckConfig&) const = default;
};

struct RunConfig {
  DataConfig data;
  /// Held-out evaluation phantoms (generated with their own seed).
  DataConfig eval_data{.seed = 1000, .num_cases = 4};
  /// Dataset directories written by `gen`; when set they replace the
  /// generated `data` / `eval_data` sets.
  std::string data_dir;
  std::string eval_dir;
  models::NetworkPlan teacher_plan{.stage_channels = {8, 16, 32}, .residual_encoder = true, .num_classes = 3,
                                   .strides = {1, 2, 2}};
  std::size_t width_factor = 2;
  std::size_t c_min = 4;
  train::TrainConfig train;
  distill::DistillConfig distill{.stages = {0, 1, 2}, .ca_stages = {0, 1, 2}};
  std::string teacher_checkpoint;
  std::string checkpoint;
  std::vector<train::AblationEntry> ablation;
  GradcheckConfig gradcheck;

  /// Cross-field checks (class count vs plan, stages vs plan).
  void validate() const;
  models::NetworkPlan student_plan() const;
};

json to_json(const RunConfig& config);
/// Strict: unknown keys, wrong types and out-of-range values raise
/// ValidationError naming the dotted field path.
RunConfig from_json(const json& j);

json distill_to_json(const distill::DistillConfig& config);
distill::DistillConfig distill_from_json(const json& j, const std::string& path = "distill");
json train_to_json(const train::TrainConfig& config);
json data_to_json(const DataConfig& config);

/// The published schema (JSON-Schema draft 2020-12 subset).
json schema();

/// Sets `dotted.path=value` in `j`. The value is parsed as JSON when
/// possible, otherwise taken as a string. Numeric segments index arrays.
void apply_override(json& j, const std::string& assignment);

/// Reads a JSON file; parse errors become ValidationError("<file>").
json load_json_file(const std::string& path);

/// Phantom specs for every case of a data config.
std::vector<io::PhantomSpec> phantom_specs(const DataConfig& config);
train::Dataset generate_dataset(const DataConfig& config, const std::string& id_prefix = "case");

}  // namespace recokd::config
